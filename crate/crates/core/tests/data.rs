use std::io::Write;

use dpscale_core::data::{
    load_mnist_idx, public_private_split, synth_gaussian_mixture, write_idx_images, write_idx_labels, IdxImages,
    Sampler, SamplingMode,
};
use dpscale_core::Error;

fn tmp(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("dpscale-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn poisson_batch_sizes_follow_the_binomial() {
    let (n, q, draws) = (50_000usize, 0.01, 10_000usize);
    let mut s = Sampler::new(SamplingMode::Poisson { q }, n, 42).unwrap();
    let sizes: Vec<f64> = (0..draws).map(|_| s.next_batch().len() as f64).collect();
    let mean = sizes.iter().sum::<f64>() / draws as f64;
    let se = (n as f64 * q * (1.0 - q) / draws as f64).sqrt();
    assert!((mean - 500.0).abs() < 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn poisson_inclusions_are_uncorrelated_across_steps() {
    let (n, q, steps) = (20usize, 0.3, 10_000usize);
    let mut s = Sampler::new(SamplingMode::Poisson { q }, n, 7).unwrap();
    let mut prev = vec![false; n];
    let mut pairs = Vec::new();
    for t in 0..steps {
        let mut cur = vec![false; n];
        for i in s.next_batch() {
            cur[i] = true;
        }
        if t > 0 {
            pairs.push((prev[0], cur[0]));
            pairs.push((cur[1], cur[2]));
        }
        prev = cur;
    }
    let m = pairs.len() as f64;
    let ma = pairs.iter().filter(|p| p.0).count() as f64 / m;
    let mb = pairs.iter().filter(|p| p.1).count() as f64 / m;
    let mab = pairs.iter().filter(|p| p.0 && p.1).count() as f64 / m;
    let corr = (mab - ma * mb) / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt();
    // Four standard errors of a null correlation estimate.
    assert!(corr.abs() < 4.0 / m.sqrt(), "{corr}");
}

#[test]
fn mnist_style_files_load_including_gzip() {
    let images = IdxImages {
        rows: 28,
        cols: 28,
        pixels: (0..3 * 784).map(|i| (i % 256) as u8).collect(),
    };
    let ip = tmp("imgs-idx3-ubyte.gz");
    let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
    gz.write_all(&write_idx_images(&images)).unwrap();
    std::fs::write(&ip, gz.finish().unwrap()).unwrap();
    let lp = tmp("labels-idx1-ubyte");
    std::fs::write(&lp, write_idx_labels(&[7, 0, 9])).unwrap();
    let d = load_mnist_idx(&ip, &lp).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.example_shape, vec![1, 28, 28]);
    assert_eq!(d.labels, vec![7, 0, 9]);
    assert!(d.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert_eq!(d.features[255], 1.0);

    let raw = write_idx_images(&images);
    let tp = tmp("trunc-idx3-ubyte");
    std::fs::write(&tp, &raw[..raw.len() - 100]).unwrap();
    assert!(matches!(load_mnist_idx(&tp, &lp), Err(Error::Format { .. })));
}

#[test]
fn split_preserves_class_proportions() {
    let d = synth_gaussian_mixture(50_000, 10, 10, 1.0, 3).unwrap();
    let (public, private) = public_private_split(&d, 0.5, 9).unwrap();
    assert_eq!((public.len(), private.len()), (25_000, 25_000));
    for ((a, b), total) in public.class_counts().iter().zip(private.class_counts()).zip(d.class_counts()) {
        assert_eq!(a + b, total);
        assert!((*a as f64 - total as f64 / 2.0).abs() <= 1.0);
    }
}

#[test]
fn zero_separation_is_indistinguishable() {
    // With identical class means the Bayes-optimal rule is a constant guess.
    let d = synth_gaussian_mixture(4000, 3, 2, 0.0, 1).unwrap();
    let mean = |class: usize| {
        let rows: Vec<_> = (0..d.len()).filter(|&i| d.labels[i] == class).collect();
        rows.iter().map(|&i| f64::from(d.example(i)[0])).sum::<f64>() / rows.len() as f64
    };
    assert!((mean(0) - mean(1)).abs() < 0.1);
}
