//! Seeded generator of paired-view ultrasound-like phantoms.
//!
//! Each phantom is an elliptical antrum (dark lumen plus bright wall) on a
//! textured background, corrupted by multiplicative speckle and bright
//! elongated artifact streaks. The two views render the same latent ellipse
//! under different affine geometries with independent noise, so the views
//! are genuinely complementary. Ground-truth masks are rasterized from the
//! latent geometry and never touched by noise.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_manifest, ContentClass, SegmentationMask, StudyRecord, UltrasoundImage, View,
};
use crate::error::{Error, Result};

/// Reference volume interval (ml) sampled for each class. Bounds chosen
/// strictly inside the grade definitions so label/volume consistency can
/// never be violated by a boundary draw.
const VOLUME_RANGES: [(f64, f64); 3] = [(5.0, 50.0), (51.0, 100.0), (101.0, 180.0)];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhantomParams {
    pub image_side: usize,
    /// Antrum pixel-area range per class, as fractions of the image area.
    /// Must be disjoint and ordered I < II < III.
    pub area_ranges: [(f64, f64); 3],
    /// Sigma of the multiplicative log-normal speckle; 0 disables it.
    pub speckle_strength: f64,
    /// Number of bright artifact streaks per view.
    pub n_artifacts: usize,
    /// Scales the RLD view's rotation/translation/area jitter; 0 makes the
    /// two views share one geometry.
    pub view_geometry_jitter: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self::desk(256)
    }
}

impl PhantomParams {
    pub fn desk(image_side: usize) -> Self {
        Self {
            image_side,
            area_ranges: [(0.07, 0.11), (0.15, 0.21), (0.25, 0.33)],
            speckle_strength: 0.25,
            n_artifacts: 3,
            view_geometry_jitter: 1.0,
        }
    }

    pub fn noiseless(image_side: usize) -> Self {
        Self {
            speckle_strength: 0.0,
            n_artifacts: 0,
            ..Self::desk(image_side)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side < 16 {
            return Err(Error::invalid("image_side must be at least 16"));
        }
        for (lo, hi) in &self.area_ranges {
            if !(0.0 < *lo && *lo < *hi && *hi < 0.5) {
                return Err(Error::invalid(format!(
                    "area range ({lo}, {hi}) must satisfy 0 < lo < hi < 0.5"
                )));
            }
        }
        for w in self.area_ranges.windows(2) {
            if w[0].1 >= w[1].0 {
                return Err(Error::invalid(
                    "area ranges must be disjoint and ordered I < II < III",
                ));
            }
        }
        if self.speckle_strength < 0.0 || self.view_geometry_jitter < 0.0 {
            return Err(Error::invalid("noise strengths must be >= 0"));
        }
        Ok(())
    }
}

/// Latent ellipse: center, semi-axes, orientation. The affine view
/// transform (rotation + translation + uniform scale) maps ellipses to
/// ellipses, so both views rasterize exactly.
#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Half-extents of the axis-aligned bounding box.
    fn extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let ex = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let ey = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (ey, ex)
    }

    fn shrink(&self, margin: f64) -> Ellipse {
        Ellipse {
            a: (self.a - margin).max(0.5),
            b: (self.b - margin).max(0.5),
            ..*self
        }
    }

    fn rasterize(&self, side: usize) -> Array2<u8> {
        let mut mask = Array2::zeros((side, side));
        for y in 0..side {
            for x in 0..side {
                if self.contains(y as f64 + 0.5, x as f64 + 0.5) {
                    mask[[y, x]] = 1;
                }
            }
        }
        mask
    }
}

fn clamp_center(side: f64, e: &mut Ellipse, rim: f64) {
    let (ey, ex) = e.extents();
    let my = (ey + rim + 1.0).min(side / 2.0);
    let mx = (ex + rim + 1.0).min(side / 2.0);
    e.cy = e.cy.clamp(my, side - my);
    e.cx = e.cx.clamp(mx, side - mx);
}

fn ellipse_for_area(
    side: f64,
    area_px: f64,
    rim: f64,
    rng: &mut ChaCha8Rng,
) -> Ellipse {
    let rho_max = (std::f64::consts::PI * (side / 2.0 - rim - 2.0).powi(2) / area_px).max(1.05);
    let rho = rng.gen_range(1.2..2.0_f64).min(rho_max);
    let a = (area_px * rho / std::f64::consts::PI).sqrt();
    let b = area_px / (std::f64::consts::PI * a);
    let mut e = Ellipse {
        cy: side / 2.0 + rng.gen_range(-0.08..0.08) * side,
        cx: side / 2.0 + rng.gen_range(-0.08..0.08) * side,
        a,
        b,
        theta: rng.gen_range(0.0..std::f64::consts::PI),
    };
    clamp_center(side, &mut e, rim);
    e
}

struct RenderStyle {
    bg_base: f64,
    bg_slope: f64,
    bg_wave_amp: f64,
    bg_wave_freq: f64,
    bg_wave_phase: f64,
    lumen: f64,
    wall: f64,
}

impl RenderStyle {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            bg_base: 0.38 + rng.gen_range(-0.02..0.02),
            bg_slope: 0.08,
            bg_wave_amp: 0.06,
            bg_wave_freq: rng.gen_range(0.8..1.6),
            bg_wave_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            lumen: 0.12,
            wall: 0.82,
        }
    }
}

fn render_view(
    outer: &Ellipse,
    rim: f64,
    side: usize,
    speckle: f64,
    n_artifacts: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f32> {
    let style = RenderStyle::sample(rng);
    let inner = outer.shrink(rim);
    let s = side as f64;
    let mut img = Array2::<f64>::zeros((side, side));
    for y in 0..side {
        for x in 0..side {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let v = if inner.contains(fy, fx) {
                style.lumen
            } else if outer.contains(fy, fx) {
                style.wall
            } else {
                style.bg_base
                    + style.bg_slope * (fy / s)
                    + style.bg_wave_amp
                        * (std::f64::consts::TAU * style.bg_wave_freq * fx / s
                            + style.bg_wave_phase)
                            .sin()
            };
            img[[y, x]] = v;
        }
    }
    // hyper-echoic streaks: bright elongated Gaussians
    for _ in 0..n_artifacts {
        let cy = rng.gen_range(0.0..s);
        let cx = rng.gen_range(0.0..s);
        let psi = rng.gen_range(0.0..std::f64::consts::PI);
        let amp = rng.gen_range(0.25..0.45);
        let sig_long = s * rng.gen_range(0.15..0.30);
        let sig_short = rng.gen_range(1.0..2.5);
        let (sn, cs) = psi.sin_cos();
        for y in 0..side {
            for x in 0..side {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let u = dx * cs + dy * sn;
                let v = -dx * sn + dy * cs;
                let g = (-(u * u) / (2.0 * sig_long * sig_long)
                    - (v * v) / (2.0 * sig_short * sig_short))
                    .exp();
                if g > 1e-4 {
                    img[[y, x]] += amp * g;
                }
            }
        }
    }
    if speckle > 0.0 {
        let half_var = 0.5 * speckle * speckle;
        for v in img.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v *= (speckle * z - half_var).exp();
        }
    }
    // clip and quantize to the 8-bit grid so PNG round trips are lossless
    img.mapv(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
}

/// Generates one paired-view study for the given class. Deterministic in
/// (params, class_label, patient_id, seed).
pub fn generate_study(
    params: &PhantomParams,
    class_label: ContentClass,
    patient_id: &str,
    seed: u64,
) -> Result<StudyRecord> {
    params.validate()?;
    if patient_id.is_empty() {
        return Err(Error::invalid("empty patient_id"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = params.image_side;
    let s = side as f64;
    let rim = (s * 0.03).max(1.25);

    let ci = class_label.index();
    let (v_lo, v_hi) = VOLUME_RANGES[ci];
    let volume = rng.gen_range(v_lo..=v_hi);
    let (f_lo, f_hi) = params.area_ranges[ci];
    // fixed monotone volume->area map, kept strictly inside the band so
    // rasterization error cannot leak across class boundaries
    let t = (volume - v_lo) / (v_hi - v_lo);
    let frac_sup = f_lo + (0.1 + 0.8 * t) * (f_hi - f_lo);
    let area_sup = frac_sup * s * s;
    let sup_ellipse = ellipse_for_area(s, area_sup, rim, &mut rng);

    // RLD: same latent antrum under rotation + translation + scale, with
    // the scaled area still inside the class band
    let j = params.view_geometry_jitter;
    let u: f64 = rng.gen_range(-1.0..1.0);
    let frac_rld = (frac_sup * (1.0 + 0.25 * j * u)).clamp(
        f_lo + 0.05 * (f_hi - f_lo),
        f_hi - 0.05 * (f_hi - f_lo),
    );
    let scale = (frac_rld / frac_sup).sqrt();
    let mut rld_ellipse = Ellipse {
        cy: sup_ellipse.cy + rng.gen_range(-0.06..0.06) * s * j,
        cx: sup_ellipse.cx + rng.gen_range(-0.06..0.06) * s * j,
        a: sup_ellipse.a * scale,
        b: sup_ellipse.b * scale,
        theta: sup_ellipse.theta + rng.gen_range(-0.6..0.6) * j,
    };
    clamp_center(s, &mut rld_ellipse, rim);

    let sup_pixels = render_view(
        &sup_ellipse,
        rim,
        side,
        params.speckle_strength,
        params.n_artifacts,
        &mut rng,
    );
    let rld_pixels = render_view(
        &rld_ellipse,
        rim,
        side,
        params.speckle_strength,
        params.n_artifacts,
        &mut rng,
    );

    let study_id = "s0";
    let record = StudyRecord {
        patient_id: patient_id.to_string(),
        rld: UltrasoundImage::new(rld_pixels, View::Rld, patient_id, study_id)?,
        sup: UltrasoundImage::new(sup_pixels, View::Sup, patient_id, study_id)?,
        label: class_label,
        volume_ml: Some(volume),
        rld_mask: Some(SegmentationMask::new(rld_ellipse.rasterize(side))?),
        sup_mask: Some(SegmentationMask::new(sup_ellipse.rasterize(side))?),
    };
    record.validate()?;
    Ok(record)
}

/// In-memory dataset generation: one study per patient, class sampled from
/// the priors. Deterministic in (params, n_patients, priors, seed).
pub fn generate_records(
    params: &PhantomParams,
    n_patients: usize,
    class_priors: [f64; 3],
    seed: u64,
) -> Result<Vec<StudyRecord>> {
    params.validate()?;
    if n_patients == 0 {
        return Err(Error::invalid("n_patients must be positive"));
    }
    let total: f64 = class_priors.iter().sum();
    if (total - 1.0).abs() > 1e-9 || class_priors.iter().any(|&p| p < 0.0) {
        return Err(Error::invalid("class priors must be non-negative and sum to 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_patients);
    for i in 0..n_patients {
        let draw: f64 = rng.gen();
        let class = if draw < class_priors[0] {
            ContentClass::I
        } else if draw < class_priors[0] + class_priors[1] {
            ContentClass::II
        } else {
            ContentClass::III
        };
        let study_seed = rng.gen::<u64>();
        records.push(generate_study(
            params,
            class,
            &format!("P{i:04}"),
            study_seed,
        )?);
    }
    Ok(records)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub n_patients: usize,
    pub class_priors: [f64; 3],
    pub realized_counts: [usize; 3],
    pub image_side: usize,
    pub manifest: String,
}

/// Generates a dataset and writes the manifest, PNGs, and a generation
/// report JSON under `dir`. Returns the records and the manifest path.
pub fn generate_dataset(
    params: &PhantomParams,
    n_patients: usize,
    class_priors: [f64; 3],
    seed: u64,
    dir: &Path,
) -> Result<(Vec<StudyRecord>, PathBuf)> {
    let records = generate_records(params, n_patients, class_priors, seed)?;
    let manifest = save_manifest(&records, dir)?;
    let mut counts = [0usize; 3];
    for r in &records {
        counts[r.label.index()] += 1;
    }
    let report = GenerationReport {
        seed,
        n_patients,
        class_priors,
        realized_counts: counts,
        image_side: params.image_side,
        manifest: manifest
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    std::fs::write(
        dir.join("generation_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok((records, manifest))
}

/// Default class priors mirroring a 868/664/642 class imbalance.
pub fn default_class_priors() -> [f64; 3] {
    let total = 868.0 + 664.0 + 642.0;
    [868.0 / total, 664.0 / total, 642.0 / total]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_generation() {
        let params = PhantomParams::desk(48);
        let a = generate_study(&params, ContentClass::II, "P0", 42).unwrap();
        let b = generate_study(&params, ContentClass::II, "P0", 42).unwrap();
        assert_eq!(a.rld.pixels(), b.rld.pixels());
        assert_eq!(a.sup.pixels(), b.sup.pixels());
        assert_eq!(
            a.sup_mask.as_ref().unwrap().pixels(),
            b.sup_mask.as_ref().unwrap().pixels()
        );
        assert_eq!(a.volume_ml, b.volume_ml);
    }

    #[test]
    fn noiseless_mask_matches_rendered_antrum() {
        // with noise off the lumen renders at 0.12 and the wall at 0.82,
        // both distinguishable from the background band [0.30, 0.54]
        let params = PhantomParams::noiseless(48);
        for seed in [1, 2, 3] {
            let r = generate_study(&params, ContentClass::II, "P0", seed).unwrap();
            for (img, mask) in [
                (&r.sup, r.sup_mask.as_ref().unwrap()),
                (&r.rld, r.rld_mask.as_ref().unwrap()),
            ] {
                for (px, m) in img.pixels().iter().zip(mask.pixels().iter()) {
                    let antrum_like = *px < 0.2 || *px > 0.6;
                    assert_eq!(antrum_like, *m == 1, "pixel {px} vs mask {m}");
                }
            }
        }
    }

    #[test]
    fn class_areas_fall_in_disjoint_bands() {
        let params = PhantomParams::desk(48);
        let n = (48 * 48) as f64;
        for seed in 0..20u64 {
            for class in ContentClass::ALL {
                let r = generate_study(&params, class, "P0", 1000 + seed).unwrap();
                let (lo, hi) = params.area_ranges[class.index()];
                for mask in [r.sup_mask.as_ref().unwrap(), r.rld_mask.as_ref().unwrap()] {
                    let frac = mask.area() as f64 / n;
                    assert!(
                        frac > lo && frac < hi,
                        "class {class} area fraction {frac} outside ({lo}, {hi}) at seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn class_iii_area_exceeds_class_ii_band() {
        let params = PhantomParams::desk(48);
        let n = (48 * 48) as f64;
        let ii_max = params.area_ranges[1].1;
        for seed in 0..10u64 {
            let r = generate_study(&params, ContentClass::III, "P0", seed).unwrap();
            let frac = r.sup_mask.as_ref().unwrap().area() as f64 / n;
            assert!(frac > ii_max);
        }
    }

    #[test]
    fn expected_area_monotone_over_seeds() {
        let params = PhantomParams::desk(48);
        let mut means = [0.0f64; 3];
        for class in ContentClass::ALL {
            let mut total = 0.0;
            for seed in 0..100u64 {
                let r = generate_study(&params, class, "P0", seed).unwrap();
                total += r.sup_mask.as_ref().unwrap().area() as f64;
            }
            means[class.index()] = total / 100.0;
        }
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn pixels_inside_unit_interval() {
        let params = PhantomParams {
            speckle_strength: 0.6,
            n_artifacts: 6,
            ..PhantomParams::desk(48)
        };
        let r = generate_study(&params, ContentClass::III, "P0", 9).unwrap();
        for px in r.rld.pixels().iter().chain(r.sup.pixels().iter()) {
            assert!((0.0..=1.0).contains(px));
        }
    }

    #[test]
    fn priors_all_first_class() {
        let params = PhantomParams::desk(32);
        let records = generate_records(&params, 12, [1.0, 0.0, 0.0], 5).unwrap();
        assert!(records.iter().all(|r| r.label == ContentClass::I));
    }

    #[test]
    fn expected_class_counts_match_priors() {
        // multinomial expectation for 364 patients with priors
        // (868, 664, 642)/2174 is about (145.3, 111.2, 107.5); the mean of
        // per-seed counts over 30 seeds has a standard error under 2
        let params = PhantomParams::desk(16);
        let priors = default_class_priors();

        // counting does not need images; draw labels exactly like the
        // generator does
        let mut sums = [0.0f64; 3];
        let n_seeds = 30u64;
        for seed in 0..n_seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..364 {
                let draw: f64 = rng.gen();
                let idx = if draw < priors[0] {
                    0
                } else if draw < priors[0] + priors[1] {
                    1
                } else {
                    2
                };
                sums[idx] += 1.0;
                let _ = rng.gen::<u64>();
            }
        }
        let means = sums.map(|s| s / n_seeds as f64);
        let expected = [145.3, 111.2, 107.5];
        for (m, e) in means.iter().zip(expected) {
            assert!((m - e).abs() < 5.0, "mean {m} vs expected {e}");
        }
        let _ = params;
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = PhantomParams::desk(48);
        p.area_ranges = [(0.1, 0.2), (0.15, 0.3), (0.35, 0.4)];
        assert!(p.validate().is_err());
        let mut p2 = PhantomParams::desk(48);
        p2.area_ranges[2] = (0.4, 0.6);
        assert!(p2.validate().is_err());
        assert!(generate_records(&PhantomParams::desk(32), 0, [1.0, 0.0, 0.0], 1).is_err());
        assert!(generate_records(&PhantomParams::desk(32), 3, [0.5, 0.0, 0.0], 1).is_err());
    }
}
