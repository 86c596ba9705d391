//! Glue between the generator, feature engineering, the network and the
//! recommender: pre-training on synthetic days, held-out evaluation and
//! per-record recommendations.

use std::fs;

use rand::seq::SliceRandom;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::features::{
    deficit_labels, engineer, DeficitPair, FeatureVector, IdealRanges, ScalerStats, N_FEATURES, N_TARGETS,
};
use crate::fedsim::build_dataset;
use crate::metrics;
use crate::mlp::{init_model, train, Checkpoint, Dataset, History};
use crate::recommender::{MessageCatalog, RecommendationSet, Recommender};
use crate::seed::{self, Stream};
use crate::synthgen::{flatten, DailyRecord, Generator};

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub history: History,
    pub train_rows: usize,
    pub val_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub mae: f64,
    /// Pooled sign accuracy as a fraction.
    pub sign_accuracy: f64,
}

/// The synthetic pre-training corpus described by `training.pretrain_*`.
pub fn pretrain_records(cfg: &ExperimentConfig) -> Result<Vec<DailyRecord>> {
    let generator = Generator::new(cfg.generator.clone())?;
    let users = generator.generate_dataset(cfg.training.pretrain_users, cfg.training.pretrain_days, cfg.seed)?;
    Ok(flatten(&users))
}

/// Seeded train/validation split, scaler fitted on the training part only,
/// then mini-batch training from a fresh initialization.
pub fn pretrain_on(records: &[DailyRecord], cfg: &ExperimentConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    if records.len() < 2 {
        return Err(Error::InvalidArgument("pre-training needs at least two records".into()));
    }
    let n = records.len();
    let n_val = ((cfg.training.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(cfg.seed, Stream::Split, 0));
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    let (train_recs, val_recs) = (pick(train_idx), pick(val_idx));

    let feats = train_recs.iter().map(engineer).collect::<Result<Vec<_>>>()?;
    let scaler = ScalerStats::fit_features(&feats)?;
    let ranges = cfg.model.ideal_ranges();
    let train_set = build_dataset(&train_recs, &scaler, &ranges)?;
    let val_set = build_dataset(&val_recs, &scaler, &ranges)?;

    let arch = cfg.architecture();
    let init = init_model(&arch, cfg.seed)?;
    let (params, history) = train(init, &train_set, &val_set, &cfg.pretrain_config())?;
    Ok(PretrainOutput {
        checkpoint: Checkpoint::new(arch, scaler, params)?,
        history,
        train_rows: train_set.len(),
        val_rows: val_set.len(),
    })
}

pub fn pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutput> {
    pretrain_on(&pretrain_records(cfg)?, cfg)
}

/// Model predictions for one record, in natural units.
pub fn predict(checkpoint: &Checkpoint, record: &DailyRecord) -> Result<DeficitPair> {
    let x = checkpoint.scaler.transform(&engineer(record)?.to_array());
    let y = checkpoint.params.forward(&x)?;
    Ok(DeficitPair::from_array([y[0], y[1]]))
}

pub fn evaluate_records(
    checkpoint: &Checkpoint,
    records: &[DailyRecord],
    ranges: &IdealRanges,
    zero_band: f64,
) -> Result<Evaluation> {
    let data: Dataset = build_dataset(records, &checkpoint.scaler, ranges)?;
    debug_assert_eq!((data.inputs, data.outputs), (N_FEATURES, N_TARGETS));
    let mut pred = Vec::with_capacity(data.y.len());
    for i in 0..data.len() {
        pred.extend(checkpoint.params.forward(data.input(i))?);
    }
    Ok(Evaluation {
        mae: metrics::mae(&data.y, &pred)?,
        sign_accuracy: metrics::sign_accuracy(&data.y, &pred, zero_band)?,
    })
}

/// Builds the recommender from config, reading a replacement catalog when
/// `recommender.catalog` is set.
pub fn recommender_from_config(cfg: &ExperimentConfig) -> Result<Recommender> {
    let catalog = match &cfg.recommender.catalog {
        Some(path) => MessageCatalog::parse(&fs::read_to_string(path)?)?,
        None => MessageCatalog::default(),
    };
    Recommender::new(cfg.recommender.clone(), catalog)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordRecommendation {
    pub features: FeatureVector,
    pub deficits: DeficitPair,
    pub set: RecommendationSet,
}

/// Recommendations for one day. With a checkpoint the deficits come from
/// the model; without one they are computed directly from the record.
pub fn recommend_record(
    recommender: &Recommender,
    record: &DailyRecord,
    ranges: &IdealRanges,
    checkpoint: Option<&Checkpoint>,
) -> Result<RecordRecommendation> {
    let features = engineer(record)?;
    let deficits = match checkpoint {
        Some(ck) => predict(ck, record)?,
        None => deficit_labels(record, ranges),
    };
    let set = recommender.recommend(&features, &deficits);
    Ok(RecordRecommendation {
        features,
        deficits,
        set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::FALLBACK_MESSAGE;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.training.pretrain_users = 40;
        c.training.pretrain_days = 10;
        c.training.pretrain_epochs = 5;
        c.seed = 11;
        c
    }

    #[test]
    fn pretrain_is_deterministic_and_splits_rows() {
        let c = small();
        let a = pretrain(&c).unwrap();
        let b = pretrain(&c).unwrap();
        assert_eq!(a.checkpoint.encode(), b.checkpoint.encode());
        assert_eq!((a.train_rows, a.val_rows), (320, 80));
        assert_eq!(a.checkpoint.scaler.count, 320);
    }

    #[test]
    fn direct_recommendation_for_ideal_day_is_fallback() {
        let c = ExperimentConfig::default();
        let r = recommender_from_config(&c).unwrap();
        let record = DailyRecord {
            date: c.generator.start_date,
            steps: 9000,
            distance_km: 6.3,
            sleep_hrs: 8.0,
            breakfast: 1,
            lunch: 1,
            dinner: 1,
            age: 21,
            height_cm: 175.0,
            weight_kg: 68.0,
            gender: 1,
            user_id: 0,
        };
        let out = recommend_record(&r, &record, &c.model.ideal_ranges(), None).unwrap();
        assert!(out.set.is_fallback());
        assert_eq!(out.set.messages, vec![FALLBACK_MESSAGE.to_string()]);
    }
}
