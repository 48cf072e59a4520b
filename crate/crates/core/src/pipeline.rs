//! Glue from committed recordings to model-ready feature sets.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::capture::{read_wav, AudioClip, CaptureError};
use crate::dataset::{segment, DatasetError, Label, SampleRecord, SegmentLabel, SEGMENT_SAMPLES, SEGMENT_SECONDS};
use crate::eval::EnvHour;
use crate::features::{read_cache, write_cache, FeatureError, FeatureMatrix, Mfcc};

pub const FEATURES_BIN: &str = "features.bin";
pub const FEATURES_CSV: &str = "features.csv";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature table and cache disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One 5 s segment's MFCCs with its label and fold.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub label: SegmentLabel,
    pub fold: Option<u8>,
    pub features: FeatureMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    source: String,
    index: usize,
    label: Label,
    fold: Option<u8>,
    t_start_s: f64,
}

fn segment_id(source: &str, index: usize) -> String {
    format!("{source}#{index}")
}

pub fn record_features(mfcc: &Mfcc, dir: &Path, record: &SampleRecord) -> Result<Vec<LabeledFeatures>, PipelineError> {
    let clip = read_wav(&dir.join(&record.filename))?;
    segment(record, &clip)
        .into_iter()
        .map(|s| {
            Ok(LabeledFeatures {
                features: mfcc.segment(&segment_id(&s.label.source, s.label.index), &s.samples)?,
                label: s.label,
                fold: record.fold,
            })
        })
        .collect()
}

/// Features for every segment of every record, in record order.
pub fn dataset_features(dir: &Path, records: &[SampleRecord]) -> Result<Vec<LabeledFeatures>, PipelineError> {
    let mfcc = Mfcc::new();
    let mut out = Vec::new();
    for r in records {
        out.extend(record_features(&mfcc, dir, r)?);
    }
    Ok(out)
}

/// Writes the binary cache and a CSV of labels and folds beside it.
pub fn save_features(out_dir: &Path, items: &[LabeledFeatures]) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir)?;
    let matrices: Vec<FeatureMatrix> = items.iter().map(|i| i.features.clone()).collect();
    write_cache(&out_dir.join(FEATURES_BIN), &matrices)?;
    let mut w = csv::Writer::from_path(out_dir.join(FEATURES_CSV))?;
    for i in items {
        w.serialize(FeatureRow {
            source: i.label.source.clone(),
            index: i.label.index,
            label: i.label.label,
            fold: i.fold,
            t_start_s: i.label.t_start_s,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_features(dir: &Path) -> Result<Vec<LabeledFeatures>, PipelineError> {
    let matrices = read_cache(&dir.join(FEATURES_BIN))?;
    let rows: Vec<FeatureRow> = csv::Reader::from_path(dir.join(FEATURES_CSV))?
        .deserialize()
        .collect::<Result<_, _>>()?;
    if rows.len() != matrices.len() {
        return Err(PipelineError::Mismatch(format!("{} rows, {} matrices", rows.len(), matrices.len())));
    }
    rows.into_iter()
        .zip(matrices)
        .map(|(r, m)| {
            if m.source != segment_id(&r.source, r.index) {
                return Err(PipelineError::Mismatch(format!("{} vs {}#{}", m.source, r.source, r.index)));
            }
            Ok(LabeledFeatures {
                label: SegmentLabel {
                    source: r.source,
                    index: r.index,
                    label: r.label,
                    t_start_s: r.t_start_s,
                },
                fold: r.fold,
                features: m,
            })
        })
        .collect()
}

/// Flat inputs, binary labels and folds for the scored segments.
pub struct TrainingSet<'a> {
    pub xs: Vec<&'a [f64]>,
    pub ys: Vec<bool>,
    pub folds: Vec<u8>,
}

/// Selects segments whose fold is in `folds`. Ignored and unassigned
/// segments are left out.
pub fn training_set<'a>(items: &'a [LabeledFeatures], folds: &[u8]) -> TrainingSet<'a> {
    let mut set = TrainingSet {
        xs: Vec::new(),
        ys: Vec::new(),
        folds: Vec::new(),
    };
    for i in items {
        if let (Some(y), Some(f)) = (i.label.label.as_bool(), i.fold) {
            if folds.contains(&f) {
                set.xs.push(&i.features.coeffs);
                set.ys.push(y);
                set.folds.push(f);
            }
        }
    }
    set
}

/// Features for each 5 s bin of a long recording, one per label. Audio
/// past the last bin is ignored; missing audio is zero.
pub fn env_hour(mfcc: &Mfcc, id: &str, clip: &AudioClip, labels: Vec<Label>) -> Result<EnvHour, PipelineError> {
    let mut features = Vec::with_capacity(labels.len());
    for b in 0..labels.len() {
        let lo = (b * SEGMENT_SAMPLES).min(clip.len());
        let hi = ((b + 1) * SEGMENT_SAMPLES).min(clip.len());
        let mut samples: Vec<f64> = clip.samples[lo..hi].iter().map(|&s| s as f64 / 32768.0).collect();
        samples.resize(SEGMENT_SAMPLES, 0.0);
        let id = format!("{id}@{}", b as f64 * SEGMENT_SECONDS);
        features.push(mfcc.segment(&id, &samples)?.coeffs);
    }
    Ok(EnvHour {
        id: id.to_string(),
        features,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{write_wav, SAMPLE_RATE_HZ};
    use crate::dataset::tests::{day, rec};
    use crate::trigger::SampleClass;

    #[test]
    fn features_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = rec("a.wav", 0, 1, day(1, 10, 0), SampleClass::Aircraft);
        a.fold = Some(2);
        let mut s = rec("s.wav", 0, 1, day(1, 11, 0), SampleClass::Silence);
        s.fold = Some(6);
        write_wav(&dir.path().join("a.wav"), &AudioClip::new((0..7 * SAMPLE_RATE_HZ as usize).map(|i| (i % 300) as i16).collect())).unwrap();
        write_wav(&dir.path().join("s.wav"), &AudioClip::new(vec![3; 10 * SAMPLE_RATE_HZ as usize])).unwrap();
        let items = dataset_features(dir.path(), &[a, s]).unwrap();
        assert_eq!(items.len(), 4);
        assert_eq!(items[1].label.label, Label::Positive);
        assert_eq!(items[1].features.source, "a.wav#1");
        assert_eq!(items[3].fold, Some(6));
        let out = dir.path().join("feat");
        save_features(&out, &items).unwrap();
        assert_eq!(load_features(&out).unwrap(), items);

        let train = training_set(&items, &[1, 2, 3, 4, 5]);
        assert_eq!(train.ys, vec![true, true]);
        assert_eq!(train.xs[0].len(), 13 * 216);
    }

    #[test]
    fn env_hour_bins_and_padding() {
        let mfcc = Mfcc::new();
        let clip = AudioClip::new(vec![100; SEGMENT_SAMPLES + 10]);
        let h = env_hour(&mfcc, "h", &clip, vec![Label::Negative, Label::Ignore, Label::Positive]).unwrap();
        assert_eq!(h.features.len(), 3);
        assert_eq!(h.labels.len(), 3);
        // Third bin has no audio at all.
        let silent = mfcc.segment("", &vec![0.0; SEGMENT_SAMPLES]).unwrap();
        assert_eq!(h.features[2], silent.coeffs);
    }
}
