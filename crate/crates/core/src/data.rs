//! Domain types, dataset manifests, and patient-level splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ultrasound acquisition view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum View {
    /// Right lateral decubitus.
    Rld,
    /// Supine.
    Sup,
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            View::Rld => write!(f, "rld"),
            View::Sup => write!(f, "sup"),
        }
    }
}

/// Gastric content grade by reference volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContentClass {
    I,
    II,
    III,
}

impl ContentClass {
    pub const ALL: [ContentClass; 3] = [ContentClass::I, ContentClass::II, ContentClass::III];

    pub fn index(self) -> usize {
        match self {
            ContentClass::I => 0,
            ContentClass::II => 1,
            ContentClass::III => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {i} out of range")))
    }

    /// Grade implied by a reference volume in millilitres:
    /// I for V <= 50, II for 50 < V <= 100, III for V > 100.
    pub fn from_volume(volume_ml: f64) -> Self {
        if volume_ml <= 50.0 {
            ContentClass::I
        } else if volume_ml <= 100.0 {
            ContentClass::II
        } else {
            ContentClass::III
        }
    }
}

impl fmt::Display for ContentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContentClass::I => write!(f, "I"),
            ContentClass::II => write!(f, "II"),
            ContentClass::III => write!(f, "III"),
        }
    }
}

impl std::str::FromStr for ContentClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" => Ok(ContentClass::I),
            "II" => Ok(ContentClass::II),
            "III" => Ok(ContentClass::III),
            other => Err(Error::invalid(format!(
                "label {other:?} outside {{I, II, III}}"
            ))),
        }
    }
}

/// A single square grayscale ultrasound frame with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundImage {
    pixels: Array2<f32>,
    pub view: View,
    pub patient_id: String,
    pub study_id: String,
}

impl UltrasoundImage {
    pub fn new(
        pixels: Array2<f32>,
        view: View,
        patient_id: impl Into<String>,
        study_id: impl Into<String>,
    ) -> Result<Self> {
        let (h, w) = pixels.dim();
        if h != w {
            return Err(Error::shape(format!("image must be square, got {h}x{w}")));
        }
        if h == 0 {
            return Err(Error::shape("image side must be positive".to_string()));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("pixel intensity outside [0, 1]"));
        }
        Ok(Self {
            pixels,
            view,
            patient_id: patient_id.into(),
            study_id: study_id.into(),
        })
    }

    pub fn pixels(&self) -> &Array2<f32> {
        &self.pixels
    }

    pub fn side(&self) -> usize {
        self.pixels.dim().0
    }
}

/// Binary mask of the gastric antrum; 1 marks antrum pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pixels: Array2<u8>,
}

impl SegmentationMask {
    pub fn new(pixels: Array2<u8>) -> Result<Self> {
        if pixels.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { pixels })
    }

    pub fn pixels(&self) -> &Array2<u8> {
        &self.pixels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }
}

/// Per-pixel foreground probability emitted by the segmentation teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    foreground: Array2<f32>,
}

impl ProbabilityMap {
    pub fn new(foreground: Array2<f32>) -> Result<Self> {
        if foreground.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("probability outside [0, 1]"));
        }
        Ok(Self { foreground })
    }

    /// Constant map, useful for the guidance-off ablation (p == 1).
    pub fn constant(side: usize, value: f32) -> Self {
        Self {
            foreground: Array2::from_elem((side, side), value),
        }
    }

    pub fn foreground(&self) -> &Array2<f32> {
        &self.foreground
    }

    pub fn dim(&self) -> (usize, usize) {
        self.foreground.dim()
    }
}

/// One patient study: the paired RLD/SUP frames plus labels.
#[derive(Debug, Clone)]
pub struct StudyRecord {
    pub patient_id: String,
    pub rld: UltrasoundImage,
    pub sup: UltrasoundImage,
    pub label: ContentClass,
    pub volume_ml: Option<f64>,
    pub rld_mask: Option<SegmentationMask>,
    pub sup_mask: Option<SegmentationMask>,
}

impl StudyRecord {
    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::invalid("empty patient_id"));
        }
        if self.rld.patient_id != self.patient_id || self.sup.patient_id != self.patient_id {
            return Err(Error::invalid(format!(
                "views of study {} carry a different patient_id",
                self.patient_id
            )));
        }
        if self.rld.side() != self.sup.side() {
            return Err(Error::shape(format!(
                "study {}: view sides differ ({} vs {})",
                self.patient_id,
                self.rld.side(),
                self.sup.side()
            )));
        }
        if let Some(v) = self.volume_ml {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!("volume_ml {v} must be finite and >= 0")));
            }
            let implied = ContentClass::from_volume(v);
            if implied != self.label {
                return Err(Error::invalid(format!(
                    "study {}: label {} inconsistent with volume {v} ml (implies {implied})",
                    self.patient_id, self.label
                )));
            }
        }
        for (mask, img, name) in [
            (&self.rld_mask, &self.rld, "rld"),
            (&self.sup_mask, &self.sup, "sup"),
        ] {
            if let Some(m) = mask {
                if m.dim() != img.pixels().dim() {
                    return Err(Error::shape(format!(
                        "study {}: {name} mask {:?} does not match image {:?}",
                        self.patient_id,
                        m.dim(),
                        img.pixels().dim()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn image(&self, view: View) -> &UltrasoundImage {
        match view {
            View::Rld => &self.rld,
            View::Sup => &self.sup,
        }
    }

    pub fn mask(&self, view: View) -> Option<&SegmentationMask> {
        match view {
            View::Rld => self.rld_mask.as_ref(),
            View::Sup => self.sup_mask.as_ref(),
        }
    }
}

/// Patient-disjoint train/val/test split with a labeled/unlabeled cut of
/// the training studies for semi-supervised runs.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train_labeled: Vec<StudyRecord>,
    pub train_unlabeled: Vec<StudyRecord>,
    pub val: Vec<StudyRecord>,
    pub test: Vec<StudyRecord>,
}

impl DatasetSplit {
    pub fn train_len(&self) -> usize {
        self.train_labeled.len() + self.train_unlabeled.len()
    }

    fn patient_ids(records: &[StudyRecord]) -> Vec<&str> {
        records.iter().map(|r| r.patient_id.as_str()).collect()
    }

    /// Checks the patient-disjointness invariant across train/val/test.
    pub fn check_disjoint(&self) -> Result<()> {
        use std::collections::BTreeSet;
        let train: BTreeSet<_> = Self::patient_ids(&self.train_labeled)
            .into_iter()
            .chain(Self::patient_ids(&self.train_unlabeled))
            .collect();
        let val: BTreeSet<_> = Self::patient_ids(&self.val).into_iter().collect();
        let test: BTreeSet<_> = Self::patient_ids(&self.test).into_iter().collect();
        if train.intersection(&val).next().is_some()
            || train.intersection(&test).next().is_some()
            || val.intersection(&test).next().is_some()
        {
            return Err(Error::invalid("split is not patient-disjoint"));
        }
        Ok(())
    }
}

fn group_by_patient(records: &[StudyRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.patient_id.clone()).or_default().push(i);
    }
    groups
}

fn round_count(n: usize, num: u32, den: u32) -> usize {
    // nearest integer, ties up: floor(n*num/den + 1/2)
    ((2 * n as u64 * num as u64 + den as u64) / (2 * den as u64)) as usize
}

/// Splits studies into train/val/test at the patient level.
///
/// Val and test patient counts are the given ratio shares rounded to the
/// nearest integer; the remainder goes to train. Within train, a seeded
/// patient-wise selection marks `labeled_fraction` of the training patients
/// (at least one) as labeled; the rest of the training studies are treated
/// as unlabeled. The result is a pure function of (records, seed).
pub fn patient_level_split(
    records: &[StudyRecord],
    ratios: (u32, u32, u32),
    labeled_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let (rt, rv, rs) = ratios;
    if rt == 0 || rv == 0 || rs == 0 {
        return Err(Error::invalid("split ratios must be positive"));
    }
    if !(0.0..=1.0).contains(&labeled_fraction) {
        return Err(Error::invalid("labeled_fraction must be in [0, 1]"));
    }
    for r in records {
        r.validate()?;
    }
    let groups = group_by_patient(records);
    let n = groups.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 distinct patients, got {n}"
        )));
    }
    let mut patients: Vec<String> = groups.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    let den = rt + rv + rs;
    let n_val = round_count(n, rv, den);
    let n_test = round_count(n, rs, den);
    if n_val + n_test >= n {
        return Err(Error::invalid(format!(
            "ratios {ratios:?} leave no training patients for n={n}"
        )));
    }
    let n_train = n - n_val - n_test;

    let train_patients = &patients[..n_train];
    let val_patients = &patients[n_train..n_train + n_val];
    let test_patients = &patients[n_train + n_val..];

    let mut labeled_patients: Vec<&String> = train_patients.iter().collect();
    labeled_patients.shuffle(&mut rng);
    let n_labeled = if labeled_fraction == 0.0 {
        0
    } else {
        ((n_train as f64 * labeled_fraction).round() as usize).clamp(1, n_train)
    };
    let labeled: std::collections::BTreeSet<&String> =
        labeled_patients.into_iter().take(n_labeled).collect();

    let mut split = DatasetSplit::default();
    for p in train_patients {
        let bucket = if labeled.contains(p) {
            &mut split.train_labeled
        } else {
            &mut split.train_unlabeled
        };
        for &i in &groups[p] {
            bucket.push(records[i].clone());
        }
    }
    for p in val_patients {
        for &i in &groups[p] {
            split.val.push(records[i].clone());
        }
    }
    for p in test_patients {
        for &i in &groups[p] {
            split.test.push(records[i].clone());
        }
    }
    split.check_disjoint()?;
    Ok(split)
}

/// Partitions patients into k folds and derives one split per fold: the
/// held-out fold is the test set, the remaining patients are cut into
/// train/val by the first two ratio shares, and the labeled budget is
/// applied patient-wise within train. Every patient is held out exactly
/// once across the k splits.
pub fn kfold_patient_partition(
    records: &[StudyRecord],
    k: usize,
    ratios: (u32, u32, u32),
    labeled_fraction: f64,
    seed: u64,
) -> Result<Vec<DatasetSplit>> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be >= 2, got {k}")));
    }
    for r in records {
        r.validate()?;
    }
    let groups = group_by_patient(records);
    let n = groups.len();
    if n < k {
        return Err(Error::invalid(format!("need at least {k} patients, got {n}")));
    }
    let mut patients: Vec<String> = groups.keys().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);

    // balanced fold sizes differing by at most one
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); k];
    for (i, p) in patients.iter().enumerate() {
        folds[i % k].push(p.clone());
    }

    let (rt, rv, _) = ratios;
    if rt == 0 || rv == 0 {
        return Err(Error::invalid("train/val ratios must be positive"));
    }
    let mut splits = Vec::with_capacity(k);
    for fold in 0..k {
        let mut rest: Vec<String> = Vec::new();
        for (j, f) in folds.iter().enumerate() {
            if j != fold {
                rest.extend(f.iter().cloned());
            }
        }
        let mut fold_rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(fold as u64 + 1)));
        rest.shuffle(&mut fold_rng);
        let n_rest = rest.len();
        let n_val = round_count(n_rest, rv, rt + rv).min(n_rest.saturating_sub(1)).max(1);
        let n_train = n_rest - n_val;

        let mut labeled_pool: Vec<&String> = rest[..n_train].iter().collect();
        labeled_pool.shuffle(&mut fold_rng);
        let n_labeled = if labeled_fraction == 0.0 {
            0
        } else {
            ((n_train as f64 * labeled_fraction).round() as usize).clamp(1, n_train)
        };
        let labeled: std::collections::BTreeSet<&String> =
            labeled_pool.into_iter().take(n_labeled).collect();

        let mut split = DatasetSplit::default();
        for (idx, p) in rest.iter().enumerate() {
            let bucket = if idx < n_train {
                if labeled.contains(p) {
                    &mut split.train_labeled
                } else {
                    &mut split.train_unlabeled
                }
            } else {
                &mut split.val
            };
            for &i in &groups[p] {
                bucket.push(records[i].clone());
            }
        }
        for p in &folds[fold] {
            for &i in &groups[p] {
                split.test.push(records[i].clone());
            }
        }
        split.check_disjoint()?;
        splits.push(split);
    }
    Ok(splits)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    patient_id: String,
    study_id: String,
    rld_path: String,
    sup_path: String,
    label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    volume_ml: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rld_mask_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sup_mask_path: Option<String>,
}

fn load_image_png(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut arr = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        arr[[y as usize, x as usize]] = p.0[0] as f32 / 255.0;
    }
    Ok(arr)
}

fn load_mask_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut arr = Array2::zeros((h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        arr[[y as usize, x as usize]] = match p.0[0] {
            0 => 0,
            255 => 1,
            other => {
                return Err(Error::invalid(format!(
                    "mask {path:?} has value {other}, expected 0 or 255"
                )))
            }
        };
    }
    Ok(arr)
}

pub fn save_image_png(pixels: &Array2<f32>, path: &Path) -> Result<()> {
    let (h, w) = pixels.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in pixels.indexed_iter() {
        img.put_pixel(x as u32, y as u32, image::Luma([(v * 255.0).round() as u8]));
    }
    img.save(path)?;
    Ok(())
}

pub fn save_mask_png(mask: &SegmentationMask, path: &Path) -> Result<()> {
    let (h, w) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((y, x), &v) in mask.pixels().indexed_iter() {
        img.put_pixel(x as u32, y as u32, image::Luma([v * 255]));
    }
    img.save(path)?;
    Ok(())
}

fn record_from_entry(entry: ManifestEntry, base: &Path, line: usize) -> Result<StudyRecord> {
    let ctx = |msg: String| format!("line {line}: {msg}");
    let label: ContentClass = entry
        .label
        .parse()
        .map_err(|e: Error| Error::invalid(ctx(e.to_string())))?;
    let rld_px = load_image_png(&base.join(&entry.rld_path))
        .map_err(|e| Error::invalid(ctx(format!("rld image: {e}"))))?;
    let sup_px = load_image_png(&base.join(&entry.sup_path))
        .map_err(|e| Error::invalid(ctx(format!("sup image: {e}"))))?;
    let rld = UltrasoundImage::new(rld_px, View::Rld, &entry.patient_id, &entry.study_id)
        .map_err(|e| Error::invalid(ctx(e.to_string())))?;
    let sup = UltrasoundImage::new(sup_px, View::Sup, &entry.patient_id, &entry.study_id)
        .map_err(|e| Error::invalid(ctx(e.to_string())))?;
    let rld_mask = entry
        .rld_mask_path
        .as_ref()
        .map(|p| load_mask_png(&base.join(p)).and_then(SegmentationMask::new))
        .transpose()
        .map_err(|e| Error::invalid(ctx(format!("rld mask: {e}"))))?;
    let sup_mask = entry
        .sup_mask_path
        .as_ref()
        .map(|p| load_mask_png(&base.join(p)).and_then(SegmentationMask::new))
        .transpose()
        .map_err(|e| Error::invalid(ctx(format!("sup mask: {e}"))))?;
    let record = StudyRecord {
        patient_id: entry.patient_id,
        rld,
        sup,
        label,
        volume_ml: entry.volume_ml,
        rld_mask,
        sup_mask,
    };
    record
        .validate()
        .map_err(|e| Error::invalid(ctx(e.to_string())))?;
    Ok(record)
}

/// Loads a line-oriented manifest (one JSON record per line). Image and
/// mask paths are resolved relative to the manifest's directory. All bad
/// entries are reported together.
pub fn load_manifest(path: &Path) -> Result<Vec<StudyRecord>> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<ManifestEntry, _> = serde_json::from_str(&line);
        match parsed {
            Ok(entry) => match record_from_entry(entry, &base, i + 1) {
                Ok(r) => records.push(r),
                Err(e) => errors.push(e.to_string()),
            },
            Err(e) => errors.push(format!("line {}: {e}", i + 1)),
        }
    }
    if !errors.is_empty() {
        return Err(Error::ManifestParse(errors));
    }
    Ok(records)
}

/// Writes records as PNGs plus a JSONL manifest under `dir`. Pixel data
/// is stored as 8-bit grayscale, so intensities quantized to the 1/255
/// grid round-trip losslessly.
pub fn save_manifest(records: &[StudyRecord], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("images"))?;
    let manifest_path = dir.join("manifest.jsonl");
    let mut out = std::fs::File::create(&manifest_path)?;
    for r in records {
        r.validate()?;
        let stem = format!("{}_{}", r.patient_id, r.rld.study_id);
        let rld_path = format!("images/{stem}_rld.png");
        let sup_path = format!("images/{stem}_sup.png");
        save_image_png(r.rld.pixels(), &dir.join(&rld_path))?;
        save_image_png(r.sup.pixels(), &dir.join(&sup_path))?;
        let rld_mask_path = r
            .rld_mask
            .as_ref()
            .map(|m| {
                let p = format!("images/{stem}_rld_mask.png");
                save_mask_png(m, &dir.join(&p)).map(|_| p)
            })
            .transpose()?;
        let sup_mask_path = r
            .sup_mask
            .as_ref()
            .map(|m| {
                let p = format!("images/{stem}_sup_mask.png");
                save_mask_png(m, &dir.join(&p)).map(|_| p)
            })
            .transpose()?;
        let entry = ManifestEntry {
            patient_id: r.patient_id.clone(),
            study_id: r.rld.study_id.clone(),
            rld_path,
            sup_path,
            label: r.label.to_string(),
            volume_ml: r.volume_ml,
            rld_mask_path,
            sup_mask_path,
        };
        writeln!(out, "{}", serde_json::to_string(&entry)?)?;
    }
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_study, PhantomParams};

    fn tiny_records(n: usize) -> Vec<StudyRecord> {
        let params = PhantomParams::desk(32);
        (0..n)
            .map(|i| {
                let class = ContentClass::ALL[i % 3];
                generate_study(&params, class, &format!("P{i:03}"), 1000 + i as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn volume_label_boundaries() {
        assert_eq!(ContentClass::from_volume(50.0), ContentClass::I);
        assert_eq!(ContentClass::from_volume(50.0001), ContentClass::II);
        assert_eq!(ContentClass::from_volume(100.0), ContentClass::II);
        assert_eq!(ContentClass::from_volume(100.0001), ContentClass::III);
    }

    #[test]
    fn record_validation_rejects_inconsistent_volume() {
        let mut r = tiny_records(1).remove(0);
        r.volume_ml = Some(50.0);
        r.label = ContentClass::II;
        assert!(r.validate().is_err());
        r.label = ContentClass::I;
        assert!(r.validate().is_ok());
    }

    #[test]
    fn split_ten_patients_seed7() {
        let records = tiny_records(10);
        let s = patient_level_split(&records, (7, 2, 1), 0.1, 7).unwrap();
        assert_eq!(s.train_len(), 7);
        assert_eq!(s.val.len(), 2);
        assert_eq!(s.test.len(), 1);
        let s2 = patient_level_split(&records, (7, 2, 1), 0.1, 7).unwrap();
        let ids = |v: &[StudyRecord]| v.iter().map(|r| r.patient_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&s.test), ids(&s2.test));
        assert_eq!(ids(&s.val), ids(&s2.val));
        assert_eq!(ids(&s.train_labeled), ids(&s2.train_labeled));
    }

    #[test]
    fn split_counts_364() {
        // nearest-integer shares: val round(364*0.2)=73, test round(364*0.1)=36,
        // remainder 255 to train
        assert_eq!(round_count(364, 2, 10), 73);
        assert_eq!(round_count(364, 1, 10), 36);
        assert_eq!(364 - 73 - 36, 255);
    }

    #[test]
    fn split_rejects_too_few_patients() {
        let records = tiny_records(2);
        assert!(patient_level_split(&records, (7, 2, 1), 0.1, 0).is_err());
    }

    #[test]
    fn kfold_partitions_patients() {
        let records = tiny_records(11);
        let splits = kfold_patient_partition(&records, 5, (7, 2, 1), 0.2, 3).unwrap();
        assert_eq!(splits.len(), 5);
        let mut held_out: Vec<String> = splits
            .iter()
            .flat_map(|s| s.test.iter().map(|r| r.patient_id.clone()))
            .collect();
        held_out.sort();
        let mut all: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();
        all.sort();
        assert_eq!(held_out, all);
        let sizes: Vec<usize> = splits.iter().map(|s| s.test.len()).collect();
        let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(max - min <= 1, "fold sizes {sizes:?}");
    }

    #[test]
    fn kfold_rejects_small_k() {
        let records = tiny_records(5);
        assert!(kfold_patient_partition(&records, 1, (7, 2, 1), 0.1, 0).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = tiny_records(4);
        let path = save_manifest(&records, dir.path()).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.len(), records.len());
        for (a, b) in records.iter().zip(&loaded) {
            assert_eq!(a.patient_id, b.patient_id);
            assert_eq!(a.label, b.label);
            assert_eq!(a.volume_ml, b.volume_ml);
            assert_eq!(a.rld.pixels(), b.rld.pixels());
            assert_eq!(a.sup.pixels(), b.sup.pixels());
            assert_eq!(
                a.rld_mask.as_ref().map(|m| m.pixels().clone()),
                b.rld_mask.as_ref().map(|m| m.pixels().clone())
            );
        }
    }

    #[test]
    fn manifest_empty_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn manifest_rejects_boundary_violation() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = tiny_records(1);
        records[0].volume_ml = Some(50.0);
        records[0].label = ContentClass::I;
        let path = save_manifest(&records, dir.path()).unwrap();
        assert!(load_manifest(&path).is_ok());

        // rewrite the label to II with the same volume: must be rejected
        let text = std::fs::read_to_string(&path).unwrap();
        let bad = text.replace("\"label\":\"I\"", "\"label\":\"II\"");
        std::fs::write(&path, bad).unwrap();
        match load_manifest(&path) {
            Err(Error::ManifestParse(items)) => assert_eq!(items.len(), 1),
            other => panic!("expected itemized parse error, got {other:?}"),
        }
    }
}
