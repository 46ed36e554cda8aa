//! Synthetic embryo-like time-lapse videos with labels known by construction.
//!
//! Each frame shows a near-black background, a lighter circular well, and an
//! embryo (a zona ring around lighter cytoplasm) containing dark cells. A
//! transferable (`T`) embryo divides twice (1 → 2 → 4 cells) on schedule. A
//! non-transferable (`NT`) embryo either arrests at one or two cells, or divides
//! once far off schedule. Between divisions the embryo drifts and the cell
//! arrangement rotates, and a smooth, slowly changing illumination field plus
//! additive Gaussian noise cover every frame.

use std::f32::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, quantize, VideoClip};
use crate::config::{KvMap, KvReader};
use crate::error::{Error, Result};
use crate::label::Label;

/// Frames over which a dividing cell separates into its two daughters.
const DIVISION_FRAMES: f32 = 8.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Well radius as a fraction of `min(height, width)`.
    pub well_radius: f32,
    /// Embryo (zona) radius as a fraction of `min(height, width)`.
    pub embryo_radius: f32,
    pub background_intensity: f32,
    pub well_intensity: f32,
    pub zona_intensity: f32,
    pub cytoplasm_intensity: f32,
    pub cell_intensity: f32,
    pub noise_sigma: f32,
    /// Probability that a video is NT.
    pub nt_fraction: f64,
    /// Frame window of the first division (both classes, inclusive bounds).
    pub first_division: (usize, usize),
    /// Delay window between the first and second division of T embryos.
    pub second_division_delay: (usize, usize),
    /// Frame window of the single late division of irregular NT embryos.
    pub irregular_division: (usize, usize),
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            frames: 300,
            well_radius: 0.42,
            embryo_radius: 0.19,
            background_intensity: 0.05,
            well_intensity: 0.62,
            zona_intensity: 0.42,
            cytoplasm_intensity: 0.55,
            cell_intensity: 0.18,
            noise_sigma: 0.02,
            nt_fraction: 0.65,
            first_division: (30, 80),
            second_division_delay: (30, 60),
            irregular_division: (200, 280),
        }
    }
}

impl SyntheticParams {
    /// Variant whose separating event (the second T division) always happens after
    /// frame 150, so prefixes of 150 frames or fewer cannot tell the classes apart.
    pub fn late_event() -> Self {
        Self {
            first_division: (90, 120),
            second_division_delay: (70, 90),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Param(m));
        if self.height < 8 || self.width < 8 {
            return err(format!("frame size {}×{} too small", self.height, self.width));
        }
        if self.frames < 120 {
            return err(format!("frame count {} below 120", self.frames));
        }
        if !(self.nt_fraction > 0.0 && self.nt_fraction < 1.0) {
            return err(format!("class ratio {} outside (0, 1)", self.nt_fraction));
        }
        if !(self.embryo_radius > 0.0) || !(self.well_radius > 0.0) {
            return err("radii must be positive".into());
        }
        if self.embryo_radius >= self.well_radius {
            return err(format!(
                "embryo radius {} does not fit inside well radius {}",
                self.embryo_radius, self.well_radius
            ));
        }
        if self.well_radius > 0.5 {
            return err(format!("well radius {} exceeds the frame", self.well_radius));
        }
        if !(self.noise_sigma >= 0.0) {
            return err(format!("noise sigma {} must be ≥ 0", self.noise_sigma));
        }
        for (name, (lo, hi)) in [
            ("first_division", self.first_division),
            ("second_division_delay", self.second_division_delay),
            ("irregular_division", self.irregular_division),
        ] {
            if lo > hi {
                return err(format!("{name} window ({lo}, {hi}) is empty"));
            }
        }
        Ok(())
    }

    pub fn write_kv(&self, map: &mut KvMap) {
        map.set("data.height", self.height);
        map.set("data.width", self.width);
        map.set("data.frames", self.frames);
        map.set("data.well_radius", self.well_radius);
        map.set("data.embryo_radius", self.embryo_radius);
        map.set("data.background_intensity", self.background_intensity);
        map.set("data.well_intensity", self.well_intensity);
        map.set("data.zona_intensity", self.zona_intensity);
        map.set("data.cytoplasm_intensity", self.cytoplasm_intensity);
        map.set("data.cell_intensity", self.cell_intensity);
        map.set("data.noise_sigma", self.noise_sigma);
        map.set("data.nt_fraction", self.nt_fraction);
        map.set("data.first_division", range_text(self.first_division));
        map.set("data.second_division_delay", range_text(self.second_division_delay));
        map.set("data.irregular_division", range_text(self.irregular_division));
    }

    pub fn read_kv(r: &mut KvReader<'_>) -> Result<Self> {
        let d = Self::default();
        let range = |r: &mut KvReader<'_>, key: &str, default: (usize, usize)| -> Result<(usize, usize)> {
            match r.opt::<String>(key)? {
                None => Ok(default),
                Some(text) => parse_range(&text)
                    .ok_or_else(|| Error::Config(format!("{key}={text}: expected lo..hi"))),
            }
        };
        let p = Self {
            height: r.or("data.height", d.height)?,
            width: r.or("data.width", d.width)?,
            frames: r.or("data.frames", d.frames)?,
            well_radius: r.or("data.well_radius", d.well_radius)?,
            embryo_radius: r.or("data.embryo_radius", d.embryo_radius)?,
            background_intensity: r.or("data.background_intensity", d.background_intensity)?,
            well_intensity: r.or("data.well_intensity", d.well_intensity)?,
            zona_intensity: r.or("data.zona_intensity", d.zona_intensity)?,
            cytoplasm_intensity: r.or("data.cytoplasm_intensity", d.cytoplasm_intensity)?,
            cell_intensity: r.or("data.cell_intensity", d.cell_intensity)?,
            noise_sigma: r.or("data.noise_sigma", d.noise_sigma)?,
            nt_fraction: r.or("data.nt_fraction", d.nt_fraction)?,
            first_division: range(r, "data.first_division", d.first_division)?,
            second_division_delay: range(r, "data.second_division_delay", d.second_division_delay)?,
            irregular_division: range(r, "data.irregular_division", d.irregular_division)?,
        };
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }
}

fn range_text((lo, hi): (usize, usize)) -> String {
    format!("{lo}..{hi}")
}

fn parse_range(text: &str) -> Option<(usize, usize)> {
    let (lo, hi) = text.split_once("..")?;
    Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?))
}

/// How development unfolds over the video.
#[derive(Clone, Debug, PartialEq)]
pub enum Development {
    /// Divisions at the listed frames (1 → 2 → 4 cells).
    OnSchedule { divisions: [usize; 2] },
    /// Divides at most once then stalls: `division = None` arrests at one cell.
    Arrested { division: Option<usize> },
    /// A single division far off schedule.
    Irregular { division: usize },
}

impl Development {
    /// Division frames in order.
    pub fn divisions(&self) -> Vec<usize> {
        match self {
            Development::OnSchedule { divisions } => divisions.to_vec(),
            Development::Arrested { division } => division.iter().copied().collect(),
            Development::Irregular { division } => vec![*division],
        }
    }

    /// Number of cells after all divisions at or before frame `t` completed.
    pub fn cells_at(&self, t: usize) -> usize {
        1 << self.divisions().iter().filter(|&&d| d <= t).count()
    }
}

/// Per-video random draws.
#[derive(Clone, Debug)]
struct Scene {
    development: Development,
    center: (f32, f32),
    drift: [(f32, f32, f32); 2],
    theta0: f32,
    omega: f32,
    wobble: (f32, f32),
    field: [(f32, f32, f32, f32); 3],
}

fn draw_in(rng: &mut impl Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

fn draw_scene(p: &SyntheticParams, label: Label, rng: &mut impl Rng) -> Scene {
    let development = match label {
        Label::T => {
            let d1 = draw_in(rng, p.first_division);
            let d2 = d1 + draw_in(rng, p.second_division_delay);
            Development::OnSchedule { divisions: [d1, d2] }
        }
        Label::NT => match rng.random_range(0..5) {
            0 | 1 => Development::Arrested { division: None },
            2 | 3 => Development::Arrested {
                division: Some(draw_in(rng, p.first_division)),
            },
            _ => Development::Irregular {
                division: draw_in(rng, p.irregular_division),
            },
        },
    };
    let size = p.height.min(p.width) as f32;
    let slack = (p.well_radius - p.embryo_radius) * size * 0.35;
    let center = (
        p.height as f32 / 2.0 + rng.random_range(-slack..=slack),
        p.width as f32 / 2.0 + rng.random_range(-slack..=slack),
    );
    let mut drift = [(0.0, 0.0, 0.0); 2];
    for d in &mut drift {
        *d = (
            rng.random_range(0.3..1.0),
            rng.random_range(0.01..0.04),
            rng.random_range(0.0..TAU),
        );
    }
    let mut field = [(0.0, 0.0, 0.0, 0.0); 3];
    for f in &mut field {
        *f = (
            rng.random_range(0.02..0.08),
            rng.random_range(0.02..0.08),
            rng.random_range(0.0..TAU),
            rng.random_range(0.005..0.02),
        );
    }
    Scene {
        development,
        center,
        drift,
        theta0: rng.random_range(0.0..TAU),
        omega: rng.random_range(-0.01..0.01),
        wobble: (rng.random_range(0.05..0.2), rng.random_range(0.0..TAU)),
        field,
    }
}

/// Cell centers (relative to the embryo center, in units of the embryo radius) and
/// radius at frame `t`.
fn cells(dev: &Development, t: f32, theta: f32) -> (Vec<(f32, f32)>, f32) {
    let progress = |d: usize| ((t - d as f32) / DIVISION_FRAMES).clamp(0.0, 1.0);
    let polar = |r: f32, a: f32| (r * a.cos(), r * a.sin());
    let divs = dev.divisions();
    let p1 = divs.first().map_or(0.0, |&d| progress(d));
    let p2 = divs.get(1).map_or(0.0, |&d| progress(d));
    if p2 > 0.0 {
        // two cells at θ and θ+π each split into θ±π/4 and θ+π±π/4
        let r = 0.5 + 0.05 * p2;
        let spread = PI / 4.0 * p2;
        let mut out = Vec::with_capacity(4);
        for base in [theta, theta + PI] {
            out.push(polar(r, base - spread));
            out.push(polar(r, base + spread));
        }
        return (out, 0.42 - 0.14 * p2);
    }
    if p1 > 0.0 {
        let r = 0.5 * p1;
        return (vec![polar(r, theta), polar(r, theta + PI)], 0.6 - 0.18 * p1);
    }
    (vec![(0.0, 0.0)], 0.6)
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn render(p: &SyntheticParams, scene: &Scene, rng: &mut impl Rng) -> Vec<u8> {
    let (h, w) = (p.height, p.width);
    let size = h.min(w) as f32;
    let (well_r, emb_r) = (p.well_radius * size, p.embryo_radius * size);
    let zona_w = (emb_r * 0.12).max(1.0);
    let noise = Normal::new(0.0f32, p.noise_sigma.max(f32::MIN_POSITIVE)).expect("finite sigma");
    let mut out = Vec::with_capacity(p.frames * h * w);
    for t in 0..p.frames {
        let tf = t as f32;
        let (mut cy, mut cx) = scene.center;
        for (i, &(amp, freq, phase)) in scene.drift.iter().enumerate() {
            let v = amp * (freq * tf + phase).sin();
            if i == 0 {
                cy += v;
            } else {
                cx += v;
            }
        }
        let theta = scene.theta0 + scene.omega * tf + scene.wobble.0 * (0.05 * tf + scene.wobble.1).sin();
        let (cell_pos, cell_r) = cells(&scene.development, tf, theta);
        let cell_r = cell_r * emb_r;
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
                let dw = ((py - h as f32 / 2.0).powi(2) + (px - w as f32 / 2.0).powi(2)).sqrt();
                let well = 1.0 - smoothstep(well_r - 1.0, well_r + 1.0, dw);
                let mut v = p.background_intensity + (p.well_intensity - p.background_intensity) * well;
                let mut illum = 0.0;
                for &(ky, kx, phase, speed) in &scene.field {
                    illum += (ky * py + kx * px + phase + speed * tf).sin();
                }
                v += 0.015 * illum * well;
                let de = ((py - cy).powi(2) + (px - cx).powi(2)).sqrt();
                let inside = 1.0 - smoothstep(emb_r - 0.75, emb_r + 0.75, de);
                v += (p.cytoplasm_intensity - v) * inside;
                let ring = 1.0 - smoothstep(0.0, zona_w, (de - emb_r).abs());
                v += (p.zona_intensity - v) * ring;
                for &(oy, ox) in &cell_pos {
                    let (qy, qx) = (cy + oy * emb_r, cx + ox * emb_r);
                    let dc = ((py - qy).powi(2) + (px - qx).powi(2)).sqrt();
                    let core = 1.0 - smoothstep(cell_r - 1.0, cell_r + 0.5, dc);
                    v += (p.cell_intensity - v) * core;
                }
                if p.noise_sigma > 0.0 {
                    v += noise.sample(rng);
                }
                out.push(quantize(v));
            }
        }
    }
    out
}

/// Development and label of one video, drawn from its own seed.
pub fn video_plan(p: &SyntheticParams, seed: u64) -> (Label, Development) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = if rng.random_bool(p.nt_fraction) {
        Label::NT
    } else {
        Label::T
    };
    (label, draw_scene(p, label, &mut rng).development)
}

pub fn video_id(index: usize) -> String {
    format!("vid{index:05}")
}

/// Generates one video; identical `(params, id, seed)` give identical pixels.
pub fn generate_video(p: &SyntheticParams, id: &str, global_seed: u64) -> Result<VideoClip> {
    p.validate()?;
    let seed = derive_seed(global_seed, id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = if rng.random_bool(p.nt_fraction) {
        Label::NT
    } else {
        Label::T
    };
    let scene = draw_scene(p, label, &mut rng);
    let pixels = render(p, &scene, &mut rng);
    VideoClip::new(id, label, seed, [p.frames, p.height, p.width], pixels)
}

/// `n` videos with ids `vid00000…`, each seeded from `(seed, id)`.
pub fn generate_synthetic(p: &SyntheticParams, n: usize, seed: u64) -> Result<Vec<VideoClip>> {
    if n == 0 {
        return Err(Error::Param("need at least one video".into()));
    }
    p.validate()?;
    (0..n).map(|i| generate_video(p, &video_id(i), seed)).collect()
}

/// Development of a generated video, recomputed from its stored seed.
pub fn development_of(p: &SyntheticParams, clip: &VideoClip) -> Development {
    video_plan(p, clip.seed).1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticParams {
        SyntheticParams {
            height: 32,
            width: 32,
            frames: 120,
            first_division: (10, 30),
            second_division_delay: (20, 30),
            irregular_division: (90, 110),
            ..SyntheticParams::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(), 3, 9).unwrap();
        let b = generate_synthetic(&small(), 3, 9).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(), 3, 10).unwrap();
        assert_ne!(a[0].pixels(), c[0].pixels());
    }

    #[test]
    fn plan_matches_generated_label() {
        let p = small();
        for clip in generate_synthetic(&p, 8, 1).unwrap() {
            assert_eq!(video_plan(&p, clip.seed).0, clip.label);
        }
    }

    #[test]
    fn t_embryos_reach_four_cells() {
        let dev = Development::OnSchedule { divisions: [40, 90] };
        assert_eq!(dev.cells_at(0), 1);
        assert_eq!(dev.cells_at(40), 2);
        assert_eq!(dev.cells_at(299), 4);
        assert_eq!(Development::Arrested { division: None }.cells_at(299), 1);
    }

    #[test]
    fn rejects_infeasible_geometry() {
        let p = SyntheticParams {
            embryo_radius: 0.5,
            ..SyntheticParams::default()
        };
        assert!(matches!(generate_synthetic(&p, 1, 0), Err(Error::Param(_))));
        let p = SyntheticParams {
            nt_fraction: 0.0,
            ..SyntheticParams::default()
        };
        assert!(p.validate().is_err());
        let p = SyntheticParams {
            frames: 100,
            ..SyntheticParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn late_event_second_division_after_150() {
        let p = SyntheticParams::late_event();
        let (lo, hi) = (p.first_division.0 + p.second_division_delay.0, p.first_division.1);
        assert!(lo > 150 && hi < 150);
    }

    #[test]
    fn kv_round_trip() {
        let p = SyntheticParams::late_event();
        let mut map = KvMap::new();
        p.write_kv(&mut map);
        let mut r = map.reader();
        assert_eq!(SyntheticParams::read_kv(&mut r).unwrap(), p);
        r.finish().unwrap();
    }
}
