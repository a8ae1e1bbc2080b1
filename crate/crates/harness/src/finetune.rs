//! Public pretraining followed by private fine-tuning of a partly frozen model.

use dpscale_core::autodiff::ParamTree;
use dpscale_core::data::{public_private_split, Dataset};
use dpscale_core::dp::LrSchedule;
use dpscale_core::{DType, Element};
use serde::{Deserialize, Serialize};

use crate::config::{default_warmup, ExperimentConfig};
use crate::data::{self, Splits};
use crate::error::{Error, Result};
use crate::train::{build_network, derive_seed, train_on, write_json, write_run, RunRecord, HEAD_STREAM, INIT_STREAM, SPLIT_STREAM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub public_examples: usize,
    pub private_examples: usize,
    /// Non-private training on the public split.
    pub pretrain: RunRecord,
    /// Private training on the private split; its privacy report covers only this phase.
    pub finetune: RunRecord,
    /// Private training from a fresh initialization with the same data and budget.
    pub scratch: Option<RunRecord>,
    /// Every tensor frozen during fine-tuning is bit-identical to its pretrained value.
    pub frozen_unchanged: bool,
}

fn frozen_unchanged<T: Element>(before: &ParamTree<T>, after: &ParamTree<T>) -> bool {
    after.iter().filter(|p| !p.trainable).all(|p| {
        before
            .get(&p.name)
            .is_some_and(|b| b.value.shape() == p.value.shape() && b.value.data() == p.value.data())
    })
}

fn run_typed<T: Element>(cfg: &ExperimentConfig, public: &Dataset, private: &Dataset, test: &Dataset) -> Result<FinetuneReport> {
    let ft = cfg.finetune.as_ref().expect("checked by caller");
    let net = build_network(&cfg.model, &public.example_shape, public.num_classes)?;

    let mut pre_cfg = cfg.clone().non_private().with_epochs(ft.pretrain_epochs);
    pre_cfg.name = format!("{}-pretrain", cfg.name);
    pre_cfg.freeze = Default::default();
    pre_cfg.optimizer.schedule = LrSchedule {
        max_lr: ft.pretrain_lr,
        warmup_epochs: default_warmup(ft.pretrain_epochs),
        ..pre_cfg.optimizer.schedule
    };
    pre_cfg.optimizer.virtual_steps = 1;
    pre_cfg.optimizer.batch_size = ft.pretrain_batch_size.unwrap_or(cfg.optimizer.batch_size);
    let init = net.init::<T>(derive_seed(cfg.seed, INIT_STREAM));
    let (pretrain, pretrained) = train_on(&pre_cfg, &net, init, public, test)?;

    let (net2, params) = net.replace_head(&pretrained, private.num_classes, derive_seed(cfg.seed, HEAD_STREAM))?;
    let mut ft_cfg = cfg.clone();
    ft_cfg.name = format!("{}-finetune", cfg.name);
    let (finetune, tuned) = train_on(&ft_cfg, &net2, params.clone(), private, test)?;
    let frozen_unchanged = frozen_unchanged(&pretrained, &tuned);

    let scratch = if ft.compare_scratch {
        let mut sc_cfg = cfg.clone();
        sc_cfg.name = format!("{}-scratch", cfg.name);
        sc_cfg.freeze = Default::default();
        let fresh = net2.init::<T>(derive_seed(cfg.seed, INIT_STREAM));
        Some(train_on(&sc_cfg, &net2, fresh, private, test)?.0)
    } else {
        None
    };
    Ok(FinetuneReport {
        public_examples: public.len(),
        private_examples: private.len(),
        pretrain,
        finetune,
        scratch,
        frozen_unchanged,
    })
}

pub fn cmd_finetune(cfg: &ExperimentConfig) -> Result<FinetuneReport> {
    let splits = data::load(&cfg.data)?;
    finetune_on(cfg, &splits)
}

pub fn finetune_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<FinetuneReport> {
    let ft = cfg
        .finetune
        .as_ref()
        .ok_or_else(|| Error::Config("finetune needs a `finetune` section".into()))?;
    let (public, private) = public_private_split(&splits.train, ft.public_fraction, derive_seed(cfg.seed, SPLIT_STREAM))?;
    let report = match cfg.dtype {
        DType::F32 => run_typed::<f32>(cfg, &public, &private, &splits.test)?,
        DType::F64 => run_typed::<f64>(cfg, &public, &private, &splits.test)?,
    };
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join("finetune.json"), &report)?;
        write_run(&dir.join("pretrain"), &report.pretrain)?;
        write_run(&dir.join("finetune"), &report.finetune)?;
        if let Some(s) = &report.scratch {
            write_run(&dir.join("scratch"), s)?;
        }
    }
    Ok(report)
}
