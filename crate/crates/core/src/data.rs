//! Synthetic image-like datasets and the dataset text file format.
//!
//! Each class is a Gaussian cluster in `[0,1]^d` around a sparse mean: a
//! dark background with a handful of bright class-specific coordinates,
//! like a stylized glyph on an empty image. Examples sample around the
//! mean with shared sigma and clip into range. The edge pool uses a
//! second, independent draw of patterns, so its examples come from
//! regions the main dataset never covers; an edge attack trains on them
//! relabeled, and edge ASR probes come from the same pool.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::seeds::{self, tag};

/// Background level of a class mean outside its pattern.
pub const BACKGROUND: f64 = 0.0;
/// Level of the bright pattern coordinates.
pub const BRIGHT: f64 = 0.9;

/// Number of bright coordinates in a class pattern.
///
/// Capped so all classes fit disjointly in `d` coordinates.
pub fn pattern_size(d: usize, classes: usize) -> usize {
    (d / 8).max(2).min((d / classes).max(1))
}

/// One mean vector per class: `BACKGROUND` everywhere except
/// `pattern_size` coordinates set to `BRIGHT`. One seeded shuffle of the
/// coordinate space is sliced per class, so patterns never overlap.
pub fn gen_class_means(classes: usize, d: usize, seed: u64, stream_tag: u64) -> Vec<Vec<f64>> {
    let mut rng = seeds::stream(seed, &[stream_tag, 0]);
    let k = pattern_size(d, classes);
    let mut coords: Vec<usize> = (0..d).collect();
    for i in 0..d.saturating_sub(1) {
        let j = rng.gen_range(i..d);
        coords.swap(i, j);
    }
    (0..classes)
        .map(|c| {
            let mut m = vec![BACKGROUND; d];
            for &i in &coords[(c * k) % d..][..k.min(d)] {
                m[i] = BRIGHT;
            }
            m
        })
        .collect()
}

/// Class-balanced sample around the given means, clipped to `[0, 1]`.
///
/// Labels cycle `0, 1, .., C-1, 0, ..` so any prefix is near-balanced.
/// `label_noise` is the probability an example's recorded label is
/// resampled uniformly over all classes, giving the dataset an
/// irreducible error floor like a real labeling process.
pub fn gen_examples(
    means: &[Vec<f64>],
    sigma: f64,
    label_noise: f64,
    count: usize,
    seed: u64,
    stream_tag: u64,
    substream: u64,
) -> Result<Vec<Example>> {
    if means.is_empty() {
        return Err(Error::Empty("class means"));
    }
    if !(0.0..1.0).contains(&label_noise) {
        return Err(Error::InvalidConfig(format!("label_noise {label_noise} outside [0, 1)")));
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|_| Error::InvalidConfig(format!("bad sigma {sigma}")))?;
    let mut rng = seeds::stream(seed, &[stream_tag, substream]);
    let classes = means.len();
    Ok((0..count)
        .map(|i| {
            let cluster = i % classes;
            let x: Vec<f64> = means[cluster]
                .iter()
                .map(|m| (m + normal.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            let y = if label_noise > 0.0 && rng.gen_bool(label_noise) {
                rng.gen_range(0..classes)
            } else {
                cluster
            };
            Example::new(x, y)
        })
        .collect())
}

/// Main train and test splits plus the edge pool.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    /// Edge examples handed to malicious clients under an edge attack.
    pub edge_train: Vec<Example>,
    /// Held-out edge examples used as attack-success probes.
    pub edge_test: Vec<Example>,
}

/// Generates all splits from one dataset seed.
///
/// Train and test share class means; the edge splits use a fresh draw of
/// patterns, which with overwhelming probability lights up coordinate
/// sets no main cluster uses.
#[allow(clippy::too_many_arguments)]
pub fn gen_bundle(
    d: usize,
    classes: usize,
    sigma: f64,
    label_noise: f64,
    train_count: usize,
    test_count: usize,
    edge_train_count: usize,
    edge_test_count: usize,
    seed: u64,
) -> Result<DataBundle> {
    let means = gen_class_means(classes, d, seed, tag::DATASET);
    let train = gen_examples(&means, sigma, label_noise, train_count, seed, tag::DATASET, 1)?;
    let test = gen_examples(&means, sigma, label_noise, test_count, seed, tag::DATASET, 2)?;
    let (edge_train, edge_test) = if edge_train_count + edge_test_count > 0 {
        let edge_means = gen_class_means(classes, d, seed, tag::EDGE_SET);
        (
            gen_examples(&edge_means, sigma, 0.0, edge_train_count, seed, tag::EDGE_SET, 1)?,
            gen_examples(&edge_means, sigma, 0.0, edge_test_count, seed, tag::EDGE_SET, 2)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(DataBundle { train, test, edge_train, edge_test })
}

/// Writes examples in the text format: a `d classes count` header line,
/// then one line per example with `d` floats and the label.
pub fn write_dataset(path: &Path, d: usize, classes: usize, data: &[Example]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{d} {classes} {}", data.len())?;
    for e in data {
        for v in &e.x {
            write!(out, "{v} ")?;
        }
        writeln!(out, "{}", e.y)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the text format back; validates the header against every row.
pub fn read_dataset(path: &Path) -> Result<(usize, usize, Vec<Example>)> {
    let malformed = |detail: String| Error::Malformed { kind: "dataset", detail };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| malformed("empty file".into()))??;
    let parts: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| malformed(format!("header {header:?}: {e}")))?;
    let [d, classes, count] = parts[..] else {
        return Err(malformed(format!("header {header:?}: want 3 fields")));
    };
    let mut data = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != d + 1 {
            return Err(malformed(format!("row {i}: {} fields, want {}", tokens.len(), d + 1)));
        }
        let x: Vec<f64> = tokens[..d]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| malformed(format!("row {i}: {e}")))?;
        let y: usize = tokens[d]
            .parse()
            .map_err(|e| malformed(format!("row {i} label: {e}")))?;
        if y >= classes {
            return Err(malformed(format!("row {i}: label {y} >= {classes} classes")));
        }
        data.push(Example::new(x, y));
    }
    if data.len() != count {
        return Err(malformed(format!("{} rows, header said {count}", data.len())));
    }
    Ok((d, classes, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn means_are_disjoint_sparse_patterns() {
        let means = gen_class_means(10, 64, 7, tag::DATASET);
        assert_eq!(means.len(), 10);
        let k = pattern_size(64, 10);
        let mut seen = vec![false; 64];
        for m in &means {
            assert_eq!(m.len(), 64);
            let bright: Vec<usize> =
                (0..64).filter(|&i| m[i] == BRIGHT).collect();
            assert_eq!(bright.len(), k);
            assert!(m.iter().filter(|&&v| v == BACKGROUND).count() == 64 - k);
            for i in bright {
                assert!(!seen[i], "coordinate {i} lit by two classes");
                seen[i] = true;
            }
        }
    }

    #[test]
    fn examples_are_balanced_and_clipped() {
        let means = gen_class_means(4, 16, 3, tag::DATASET);
        let data = gen_examples(&means, 0.3, 0.0, 400, 3, tag::DATASET, 1).unwrap();
        assert_eq!(data.len(), 400);
        for c in 0..4 {
            assert_eq!(data.iter().filter(|e| e.y == c).count(), 100);
        }
        assert!(data.iter().all(|e| e.x.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn label_noise_flips_expected_fraction() {
        let means = gen_class_means(4, 16, 3, tag::DATASET);
        let noisy = gen_examples(&means, 0.1, 0.2, 4000, 3, tag::DATASET, 1).unwrap();
        // Labels cycle i % classes before noise; resampling keeps the old
        // label 1/4 of the time, so about 600 of 4000 end up flipped.
        let flipped = noisy.iter().enumerate().filter(|(i, e)| e.y != i % 4).count();
        assert!((flipped as f64 - 600.0).abs() < 120.0, "{flipped} flips");

        let clean = gen_examples(&means, 0.1, 0.0, 4000, 3, tag::DATASET, 1).unwrap();
        assert!(clean.iter().enumerate().all(|(i, e)| e.y == i % 4));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_bundle(16, 4, 0.1, 0.0, 200, 50, 20, 20, 9).unwrap();
        let b = gen_bundle(16, 4, 0.1, 0.0, 200, 50, 20, 20, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_bundle(16, 4, 0.1, 0.0, 200, 50, 20, 20, 10).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn edge_pool_uses_different_clusters() {
        let bundle = gen_bundle(32, 4, 0.05, 0.0, 100, 10, 40, 10, 5).unwrap();
        // Mean distance between same-label examples across the pools is
        // large compared to the within-cluster spread.
        let main = &bundle.train[0];
        let edge = bundle.edge_train.iter().find(|e| e.y == main.y).unwrap();
        let cross: f64 = main
            .x
            .iter()
            .zip(&edge.x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(cross > 0.4, "edge cluster too close: {cross}");
    }

    #[test]
    fn empty_edge_counts_skip_generation() {
        let bundle = gen_bundle(16, 4, 0.1, 0.0, 100, 20, 0, 0, 2).unwrap();
        assert!(bundle.edge_train.is_empty());
        assert!(bundle.edge_test.is_empty());
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.txt");
        let bundle = gen_bundle(16, 4, 0.1, 0.0, 50, 10, 0, 0, 2).unwrap();
        write_dataset(&path, 16, 4, &bundle.train).unwrap();
        let (d, classes, back) = read_dataset(&path).unwrap();
        assert_eq!((d, classes), (16, 4));
        // Shortest round-trip float formatting keeps values bit-exact.
        assert_eq!(back, bundle.train);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "2 3 1\n0.5 0.5 7\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Malformed { kind: "dataset", .. }), "{err:?}");

        std::fs::write(&path, "2 3 2\n0.5 0.5 1\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("header said 2"), "{err}");
    }
}
