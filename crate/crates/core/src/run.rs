//! One self-describing run configuration and the pipeline steps driven by it:
//! dataset generation, training on one fold, and checkpoint evaluation.
//!
//! Keys (all optional; defaults in parentheses):
//!
//! * `data.*` — synthetic generator parameters, plus `data.count` (200) and `data.seed` (0)
//! * `split.test_fraction` (0.2), `split.val_fraction` (0.2), `split.folds` (1), `split.seed` (0)
//! * `run.dataset` (`data`), `run.output` (`runs/default`), `run.fold` (0)
//! * `model.*` — network configuration (tiny defaults)
//! * `train.*`, `loss.*` — training protocol

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{KvMap, KvReader};
use crate::data::disk::{read_dataset, write_dataset, Dataset};
use crate::data::splits::{make_splits_with, DatasetSplit, SplitOptions};
use crate::data::synthetic::{generate_synthetic, SyntheticParams};
use crate::data::VideoClip;
use crate::error::{Error, Result};
use crate::model::{SfrConfig, SfrModel};
use crate::train::{fit_observed, EpochLog, FitSummary, TrainConfig, VideoSource};

/// File name under which a run archives its configuration.
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: SyntheticParams,
    pub count: usize,
    pub data_seed: u64,
    pub split: SplitOptions,
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub fold: usize,
    pub model: SfrConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: SyntheticParams::default(),
            count: 200,
            data_seed: 0,
            split: SplitOptions::default(),
            dataset: PathBuf::from("data"),
            output: PathBuf::from("runs/default"),
            fold: 0,
            model: SfrConfig::tiny(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn write_kv(&self, map: &mut KvMap) {
        self.data.write_kv(map);
        map.set("data.count", self.count);
        map.set("data.seed", self.data_seed);
        map.set("split.test_fraction", self.split.test_fraction);
        map.set("split.val_fraction", self.split.val_fraction);
        map.set("split.folds", self.split.n_folds);
        map.set("split.seed", self.split.seed);
        map.set("run.dataset", self.dataset.display());
        map.set("run.output", self.output.display());
        map.set("run.fold", self.fold);
        self.model.write_kv(map);
        self.train.write_kv(map);
    }

    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            data: SyntheticParams::read_kv(r)?,
            count: r.or("data.count", d.count)?,
            data_seed: r.or("data.seed", d.data_seed)?,
            split: SplitOptions {
                test_fraction: r.or("split.test_fraction", d.split.test_fraction)?,
                val_fraction: r.or("split.val_fraction", d.split.val_fraction)?,
                n_folds: r.or("split.folds", d.split.n_folds)?,
                seed: r.or("split.seed", d.split.seed)?,
            },
            dataset: r.or("run.dataset", d.dataset)?,
            output: r.or("run.output", d.output)?,
            fold: r.or("run.fold", d.fold)?,
            model: SfrConfig::read_kv(r)?,
            train: TrainConfig::read_kv(r)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("data.count must be ≥ 1".into()));
        }
        if self.split.n_folds == 0 {
            return Err(Error::Config("split.folds must be ≥ 1".into()));
        }
        if self.fold >= self.split.n_folds {
            return Err(Error::Config(format!(
                "run.fold={} but only {} fold(s) are configured",
                self.fold, self.split.n_folds
            )));
        }
        if self.train.clip_len < self.model.min_frames() {
            return Err(Error::Config(format!(
                "train.clip_len={} is shorter than the {} frames the model needs",
                self.train.clip_len,
                self.model.min_frames()
            )));
        }
        Ok(())
    }

    /// Builds a configuration from `key=value` text, then applies `overrides` in
    /// order. Unknown keys are rejected.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = KvMap::parse(text)?;
        for (k, v) in overrides {
            map.set(k.clone(), v);
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &KvMap) -> Result<Self> {
        let mut r = map.reader();
        let cfg = Self::read_kv(&mut r)?;
        r.finish()?;
        Ok(cfg)
    }

    pub fn to_map(&self) -> KvMap {
        let mut map = KvMap::new();
        self.write_kv(&mut map);
        map
    }

    /// Canonical text; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        self.to_map().to_text()
    }

    /// Writes the canonical configuration into `dir`.
    pub fn archive(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &[])
    }
}

/// Generated videos with their split index.
pub struct Generated {
    pub clips: Vec<VideoClip>,
    pub splits: Vec<DatasetSplit>,
}

pub fn generate(cfg: &RunConfig) -> Result<Generated> {
    let clips = generate_synthetic(&cfg.data, cfg.count, cfg.data_seed)?;
    let splits = make_splits_with(&clips, &cfg.split)?;
    Ok(Generated { clips, splits })
}

/// Generates the dataset and writes it to `cfg.dataset`.
pub fn generate_to_disk(cfg: &RunConfig) -> Result<Generated> {
    let generated = generate(cfg)?;
    write_dataset(&cfg.dataset, &generated.clips, &generated.splits)?;
    Ok(generated)
}

/// Train / validation / test videos of one fold.
pub struct FoldData {
    pub train: Vec<VideoClip>,
    pub validation: Vec<VideoClip>,
    pub test: Vec<VideoClip>,
}

impl FoldData {
    pub fn select(clips: &[VideoClip], splits: &[DatasetSplit], fold: usize) -> Result<Self> {
        let split = splits
            .get(fold)
            .ok_or_else(|| Error::Config(format!("fold {fold} not in a split index of {} fold(s)", splits.len())))?;
        let by_id = |ids: &[String]| -> Result<Vec<VideoClip>> {
            ids.iter()
                .map(|id| {
                    clips
                        .iter()
                        .find(|c| &c.id == id)
                        .cloned()
                        .ok_or_else(|| Error::Input(format!("split refers to unknown video {id}")))
                })
                .collect()
        };
        Ok(Self {
            train: by_id(&split.train)?,
            validation: by_id(&split.validation)?,
            test: by_id(&split.test)?,
        })
    }

    pub fn from_dataset(dataset: &Dataset, fold: usize) -> Result<Self> {
        Self::select(&dataset.clips, &dataset.splits, fold)
    }
}

/// Loads `cfg.dataset` and returns the configured fold.
pub fn load_fold(cfg: &RunConfig) -> Result<FoldData> {
    FoldData::from_dataset(&read_dataset(&cfg.dataset)?, cfg.fold)
}

/// Trains a fresh model on `data.train` (augmented), validating on
/// `data.validation`; artifacts and the archived configuration go to `cfg.output`.
pub fn train_fold(
    cfg: &RunConfig,
    data: &FoldData,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<(SfrModel, FitSummary)> {
    if data.validation.is_empty() {
        return Err(Error::Config("the validation split is empty".into()));
    }
    let t = &cfg.train;
    let train = VideoSource::augmented(&data.train, t.augment_factor, t.seed, t.clip_len, t.sampling)?;
    let val = VideoSource::plain(&data.validation, t.clip_len, t.sampling);
    cfg.archive(&cfg.output)?;
    let mut model = SfrModel::build(&cfg.model, t.seed)?;
    let summary = fit_observed(&mut model, &train, &val, t, &cfg.output, observer)?;
    Ok((model, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_identity() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text, &[]).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let cfg = RunConfig::from_text("train.max_epochs=3\n", &[("model.alpha".into(), "2".into())]).unwrap();
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.model.alpha, 2);
        let err = RunConfig::from_text("train.max_epoch=3\n", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn fold_outside_the_split_count_is_rejected() {
        assert!(RunConfig::from_text("run.fold=1\n", &[]).is_err());
        assert!(RunConfig::from_text("run.fold=1\nsplit.folds=2\n", &[]).is_ok());
    }

    #[test]
    fn generation_is_deterministic_and_stratified() {
        let cfg = RunConfig::from_text("data.count=12\ndata.frames=120\ndata.height=16\ndata.width=16\n", &[]).unwrap();
        let (a, b) = (generate(&cfg).unwrap(), generate(&cfg).unwrap());
        assert_eq!(a.clips, b.clips);
        assert_eq!(a.splits, b.splits);
        let fold = FoldData::select(&a.clips, &a.splits, 0).unwrap();
        assert_eq!(fold.train.len() + fold.validation.len() + fold.test.len(), 12);
    }
}
