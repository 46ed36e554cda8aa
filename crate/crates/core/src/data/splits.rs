//! Stratified train / validation / test splits that keep augmented variants with
//! their source video.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::VideoClip;
use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitOptions {
    pub test_fraction: f64,
    /// Fraction of the train+validation pool held out for validation.
    pub val_fraction: f64,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            val_fraction: 0.2,
            n_folds: 1,
            seed: 0,
        }
    }
}

/// Splits `total` into per-class counts proportional to `sizes` (largest remainder).
fn apportion(sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let n: usize = sizes.iter().sum();
    let target = (fraction * n as f64).round() as usize;
    let quotas = sizes.map(|s| fraction * s as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut order = [0, 1];
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut i = 0;
    while counts.iter().sum::<usize>() < target && i < 4 {
        let c = order[i % 2];
        if counts[c] < sizes[c] {
            counts[c] += 1;
        }
        i += 1;
    }
    counts
}

/// Fold `k` of the stratified splits over the sources in `clips`.
pub fn make_splits_with(clips: &[VideoClip], opts: &SplitOptions) -> Result<Vec<DatasetSplit>> {
    if opts.n_folds == 0 {
        return Err(Error::Param("n_folds must be ≥ 1".into()));
    }
    for (name, f) in [("test", opts.test_fraction), ("validation", opts.val_fraction)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::Param(format!("{name} fraction {f} outside [0, 1)")));
        }
    }
    // sources per class, in first-appearance order
    let mut source_label: HashMap<&str, Label> = HashMap::new();
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for c in clips {
        match source_label.get(c.source_id.as_str()) {
            Some(&l) if l != c.label => {
                return Err(Error::Param(format!(
                    "clip {} disagrees with the label of its source {}",
                    c.id, c.source_id
                )))
            }
            Some(_) => {}
            None => {
                source_label.insert(&c.source_id, c.label);
                by_class[c.label.index()].push(&c.source_id);
            }
        }
    }
    if by_class.iter().any(|v| v.len() < 2) {
        return Err(Error::Param(format!(
            "too few videos to stratify: {} T and {} NT sources (need ≥ 2 each)",
            by_class[0].len(),
            by_class[1].len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for list in &mut by_class {
        list.shuffle(&mut rng);
    }
    let sizes = [by_class[0].len(), by_class[1].len()];
    let n_test = apportion(sizes, opts.test_fraction);
    let pool_sizes = [sizes[0] - n_test[0], sizes[1] - n_test[1]];
    let n_val = apportion(pool_sizes, opts.val_fraction);

    let mut splits = Vec::with_capacity(opts.n_folds);
    for fold in 0..opts.n_folds {
        let mut role: HashMap<&str, u8> = HashMap::new();
        for c in 0..2 {
            let (test, pool) = by_class[c].split_at(n_test[c]);
            for s in test {
                role.insert(s, 2);
            }
            let start = (fold * n_val[c]) % pool.len().max(1);
            for (i, s) in pool.iter().enumerate() {
                let offset = (i + pool.len() - start) % pool.len();
                role.insert(s, u8::from(offset < n_val[c]));
            }
        }
        let mut split = DatasetSplit {
            fold,
            ..DatasetSplit::default()
        };
        for c in clips {
            let list = match role[c.source_id.as_str()] {
                0 => &mut split.train,
                1 => &mut split.validation,
                _ => &mut split.test,
            };
            list.push(c.id.clone());
        }
        splits.push(split);
    }
    Ok(splits)
}

/// Stratified splits with a 20% validation share of the train+validation pool.
pub fn make_splits(
    clips: &[VideoClip],
    test_fraction: f64,
    n_folds: usize,
    seed: u64,
) -> Result<Vec<DatasetSplit>> {
    make_splits_with(
        clips,
        &SplitOptions {
            test_fraction,
            n_folds,
            seed,
            ..SplitOptions::default()
        },
    )
}

/// Split index text: `folds=N` plus `fold.K.{train,validation,test}=id,id,…`.
pub fn splits_to_text(splits: &[DatasetSplit]) -> String {
    let mut map = KvMap::new();
    map.set("folds", splits.len());
    for s in splits {
        map.set(format!("fold.{}.train", s.fold), s.train.join(","));
        map.set(format!("fold.{}.validation", s.fold), s.validation.join(","));
        map.set(format!("fold.{}.test", s.fold), s.test.join(","));
    }
    map.to_text()
}

pub fn splits_from_text(text: &str) -> Result<Vec<DatasetSplit>> {
    let map = KvMap::parse(text)?;
    let mut r = map.reader();
    let folds: usize = r.req("folds")?;
    let mut out = Vec::with_capacity(folds);
    let ids = |r: &mut crate::config::KvReader<'_>, key: String| -> Result<Vec<String>> {
        let text: String = r.req(&key)?;
        Ok(text.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
    };
    for fold in 0..folds {
        out.push(DatasetSplit {
            fold,
            train: ids(&mut r, format!("fold.{fold}.train"))?,
            validation: ids(&mut r, format!("fold.{fold}.validation"))?,
            test: ids(&mut r, format!("fold.{fold}.test"))?,
        });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clips(n_t: usize, n_nt: usize) -> Vec<VideoClip> {
        (0..n_t + n_nt)
            .map(|i| {
                let label = if i < n_t { Label::T } else { Label::NT };
                VideoClip::new(format!("v{i}"), label, i as u64, [1, 1, 1], vec![0]).unwrap()
            })
            .collect()
    }

    #[test]
    fn apportion_hits_the_rounded_total() {
        assert_eq!(apportion([331, 616], 184.0 / 947.0).iter().sum::<usize>(), 184);
        assert_eq!(apportion([3, 7], 0.0), [0, 0]);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let c = clips(35, 65);
        for s in make_splits(&c, 0.2, 3, 4).unwrap() {
            let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
            assert_eq!(all.len(), 100);
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 100);
            assert_eq!(s.test.len(), 20);
            assert_eq!(s.validation.len(), 16);
        }
    }

    #[test]
    fn folds_rotate_validation_but_keep_test() {
        let c = clips(35, 65);
        let s = make_splits(&c, 0.2, 2, 4).unwrap();
        assert_eq!(s[0].test, s[1].test);
        assert_ne!(s[0].validation, s[1].validation);
    }

    #[test]
    fn too_few_to_stratify() {
        assert!(matches!(make_splits(&clips(1, 5), 0.2, 1, 0), Err(Error::Param(_))));
    }

    #[test]
    fn text_round_trip() {
        let s = make_splits(&clips(5, 9), 0.25, 2, 1).unwrap();
        assert_eq!(splits_from_text(&splits_to_text(&s)).unwrap(), s);
    }
}
