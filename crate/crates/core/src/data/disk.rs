//! On-disk dataset layout:
//!
//! ```text
//! <root>/manifest.tsv          id  label  frame_count  height  width  seed  period_minutes
//! <root>/splits.txt            split index (see `splits::splits_to_text`)
//! <root>/<id>/manifest.txt     the video's record as key=value lines
//! <root>/<id>/000000.png …     8-bit grayscale frames in temporal order
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::splits::{splits_from_text, splits_to_text, DatasetSplit};
use super::VideoClip;
use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::label::Label;

pub const MANIFEST: &str = "manifest.tsv";
pub const SPLITS: &str = "splits.txt";
pub const MANIFEST_HEADER: &str = "id\tlabel\tframe_count\theight\twidth\tseed\tperiod_minutes";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub label: Label,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub period_minutes: f32,
}

impl ManifestRecord {
    pub fn of(clip: &VideoClip) -> Self {
        Self {
            id: clip.id.clone(),
            label: clip.label,
            frame_count: clip.frames(),
            height: clip.height(),
            width: clip.width(),
            seed: clip.seed,
            period_minutes: clip.frame_period_minutes,
        }
    }

    fn to_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id, self.label, self.frame_count, self.height, self.width, self.seed, self.period_minutes
        )
    }

    fn from_row(row: &str) -> Result<Self> {
        let f: Vec<&str> = row.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::Input(format!("manifest row {row:?}: expected 7 fields")));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Input(format!("manifest row {row:?}: bad number {s:?}")))
        };
        Ok(Self {
            id: f[0].to_string(),
            label: f[1].parse()?,
            frame_count: num(f[2])?,
            height: num(f[3])?,
            width: num(f[4])?,
            seed: f[5]
                .parse()
                .map_err(|_| Error::Input(format!("manifest row {row:?}: bad seed")))?,
            period_minutes: f[6]
                .parse()
                .map_err(|_| Error::Input(format!("manifest row {row:?}: bad period")))?,
        })
    }
}

pub fn manifest_text(clips: &[VideoClip]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for c in clips {
        out.push_str(&ManifestRecord::of(c).to_row());
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(Error::Input(format!("manifest header must be {MANIFEST_HEADER:?}")));
    }
    lines.filter(|l| !l.trim().is_empty()).map(ManifestRecord::from_row).collect()
}

pub fn frame_name(t: usize) -> String {
    format!("{t:06}.png")
}

fn write_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let fmt_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut w = enc.write_header().map_err(fmt_err)?;
    w.write_image_data(pixels).map_err(fmt_err)?;
    w.finish().map_err(fmt_err)
}

fn read_png(path: &Path, width: usize, height: usize) -> Result<Vec<u8>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fmt_err = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info().map_err(fmt_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale
        || info.bit_depth != png::BitDepth::Eight
        || info.width as usize != width
        || info.height as usize != height
    {
        return Err(Error::Format(format!(
            "{}: expected {width}×{height} 8-bit grayscale",
            path.display()
        )));
    }
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(width * height)];
    let frame = reader.next_frame(&mut buf).map_err(fmt_err)?;
    buf.truncate(frame.buffer_size());
    Ok(buf)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes every clip, the manifest and the split index under `root`.
pub fn write_dataset(root: &Path, clips: &[VideoClip], splits: &[DatasetSplit]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for clip in clips {
        let dir = root.join(&clip.id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in 0..clip.frames() {
            write_png(&dir.join(frame_name(t)), clip.width(), clip.height(), clip.frame(t))?;
        }
        let rec = ManifestRecord::of(clip);
        let mut kv = KvMap::new();
        kv.set("id", &rec.id);
        kv.set("label", rec.label);
        kv.set("frame_count", rec.frame_count);
        kv.set("height", rec.height);
        kv.set("width", rec.width);
        kv.set("seed", rec.seed);
        kv.set("period_minutes", rec.period_minutes);
        write_text(&dir.join("manifest.txt"), &kv.to_text())?;
    }
    write_text(&root.join(MANIFEST), &manifest_text(clips))?;
    write_text(&root.join(SPLITS), &splits_to_text(splits))
}

pub struct Dataset {
    pub root: PathBuf,
    pub clips: Vec<VideoClip>,
    pub splits: Vec<DatasetSplit>,
}

impl Dataset {
    pub fn clip(&self, id: &str) -> Option<&VideoClip> {
        self.clips.iter().find(|c| c.id == id)
    }

    /// Clips of the listed ids, in list order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<VideoClip>> {
        ids.iter()
            .map(|id| {
                self.clip(id)
                    .cloned()
                    .ok_or_else(|| Error::Input(format!("split refers to unknown video {id}")))
            })
            .collect()
    }
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::Input(format!("no dataset at {} (missing {MANIFEST})", root.display())));
    }
    parse_manifest(&read_text(&path)?)
}

/// Loads every video listed in the manifest together with the split index.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let records = read_manifest(root)?;
    let mut clips = Vec::with_capacity(records.len());
    for rec in records {
        let dir = root.join(&rec.id);
        let mut pixels = Vec::with_capacity(rec.frame_count * rec.height * rec.width);
        for t in 0..rec.frame_count {
            pixels.extend(read_png(&dir.join(frame_name(t)), rec.width, rec.height)?);
        }
        let mut clip = VideoClip::new(
            rec.id,
            rec.label,
            rec.seed,
            [rec.frame_count, rec.height, rec.width],
            pixels,
        )?;
        clip.frame_period_minutes = rec.period_minutes;
        clips.push(clip);
    }
    let splits = splits_from_text(&read_text(&root.join(SPLITS))?)?;
    Ok(Dataset {
        root: root.to_path_buf(),
        clips,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let clips: Vec<VideoClip> = (0..3)
            .map(|i| VideoClip::new(format!("v{i}"), Label::NT, i, [2, 3, 4], vec![i as u8; 24]).unwrap())
            .collect();
        let recs = parse_manifest(&manifest_text(&clips)).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2], ManifestRecord::of(&clips[2]));
        assert!(parse_manifest("wrong header\n").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clips: Vec<VideoClip> = (0..6)
            .map(|i| {
                let label = if i % 2 == 0 { Label::T } else { Label::NT };
                let px = (0..2 * 5 * 7).map(|p| ((p * 3 + i) % 256) as u8).collect();
                VideoClip::new(format!("v{i}"), label, i as u64, [2, 5, 7], px).unwrap()
            })
            .collect();
        let splits = crate::data::splits::make_splits(&clips, 0.34, 1, 0).unwrap();
        write_dataset(dir.path(), &clips, &splits).unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.clips, clips);
        assert_eq!(ds.splits, splits);
        assert!(dir.path().join("v0").join("000001.png").is_file());
    }

    #[test]
    fn missing_dataset_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(&dir.path().join("nope")), Err(Error::Input(_))));
    }
}
