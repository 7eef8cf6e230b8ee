use std::collections::BTreeMap;

use super::softmax::{train_softmax, train_softmax_dynamic, SoftmaxHyper, SoftmaxParams};
use crate::checkpoint::Checkpoint;
use crate::data::{GzslSource, SideInfoAssignment, Split};
use crate::error::{Error, Result};
use crate::latent::{build_fixed, encode_eval_set, DynamicStream, LatentDataset, SamplingPlan, ShotPool};
use crate::numerics::SeededRng;

/// Fraction of correct predictions for each class in `class_set`,
/// independent of how many test samples each class has.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], class_set: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if preds.len() != labels.len() {
        return Err(Error::dim("per_class_accuracy", labels.len(), preds.len()));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = class_set.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &l) in preds.iter().zip(labels) {
        if let Some((hit, total)) = counts.get_mut(&l) {
            *total += 1;
            *hit += usize::from(p == l);
        }
    }
    counts
        .into_iter()
        .map(|(c, (hit, total))| {
            if total == 0 {
                Err(Error::contract(format!("class {c} has no test samples")))
            } else {
                Ok((c, hit as f64 / total as f64))
            }
        })
        .collect()
}

/// `2SU / (S + U)`, or 0 when both are 0.
pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u > 0.0 {
        2.0 * s * u / (s + u)
    } else {
        0.0
    }
}

/// Seen/unseen mean per-class accuracies (percent) and their harmonic mean.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Keyed by class index, values in `[0, 1]`.
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub s: f64,
    pub u: f64,
    pub h: f64,
}

fn mean_of(acc: &BTreeMap<usize, f64>) -> f64 {
    100.0 * acc.values().sum::<f64>() / acc.len() as f64
}

/// Scores a classifier whose label space covers seen ∪ unseen classes.
pub fn evaluate_gzsl(model: &SoftmaxParams, test_seen: &LatentDataset, test_unseen: &LatentDataset) -> Result<EvalReport> {
    let classes_of = |set: &LatentDataset| {
        let mut c = set.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    };
    let seen = classes_of(test_seen);
    let unseen = classes_of(test_unseen);
    let seen_acc = per_class_accuracy(&model.predict(&test_seen.vectors)?, &test_seen.labels, &seen)?;
    let unseen_acc = per_class_accuracy(&model.predict(&test_unseen.vectors)?, &test_unseen.labels, &unseen)?;
    let s = if seen_acc.is_empty() { 0.0 } else { mean_of(&seen_acc) };
    let u = if unseen_acc.is_empty() { 0.0 } else { mean_of(&unseen_acc) };
    let mut per_class_accuracy = seen_acc;
    per_class_accuracy.extend(unseen_acc);
    Ok(EvalReport {
        per_class_accuracy,
        s,
        u,
        h: harmonic_mean(s, u),
    })
}

/// Conventional zero-shot accuracy: the label space is restricted to the
/// unseen classes. Returns the mean per-class accuracy in percent.
pub fn evaluate_zsl(model: &SoftmaxParams, test_unseen: &LatentDataset, unseen_classes: &[usize]) -> Result<f64> {
    let restricted = model.restricted(unseen_classes)?;
    let acc = per_class_accuracy(&restricted.predict(&test_unseen.vectors)?, &test_unseen.labels, unseen_classes)?;
    Ok(mean_of(&acc))
}

/// Number of unseen-class image features released for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FewShotPlan {
    pub shots: usize,
    pub seed: u64,
}

/// Picks `plan.shots` test features per unseen class, each class from its
/// own substream. At least one sample per class must remain for testing.
/// Only labels are consulted; no feature is read.
pub fn select_shots<S: GzslSource + ?Sized>(source: &S, plan: &FewShotPlan) -> Result<ShotPool> {
    let by_class = source.indices_by_class(Split::TestUnseen);
    let mut per_class = vec![Vec::new(); source.classes().len()];
    if plan.shots == 0 {
        return Ok(ShotPool { per_class });
    }
    let root = SeededRng::new(plan.seed).fork(0x5407);
    for &k in &source.unseen_classes() {
        let pool = &by_class[k];
        if plan.shots >= pool.len() {
            return Err(Error::contract(format!(
                "{} shots requested but unseen class {} has only {} samples",
                plan.shots,
                source.classes()[k].id,
                pool.len()
            )));
        }
        let mut order = pool.clone();
        root.fork(source.classes()[k].id as u64).shuffle(&mut order);
        order.truncate(plan.shots);
        order.sort_unstable();
        per_class[k] = order;
    }
    Ok(ShotPool { per_class })
}

/// Settings of the classifier stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub plan: SamplingPlan,
    pub hyper: SoftmaxHyper,
    pub shots: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            plan: SamplingPlan::default(),
            hyper: SoftmaxHyper::default(),
            shots: 0,
            seed: 0,
        }
    }
}

fn latent_seed(seed: u64) -> u64 {
    seed ^ 0x1a7e_47
}

/// The fixed latent training set [`evaluate_fewshot`] fits its classifier
/// on, including any released shots.
pub fn latent_training_set<S: GzslSource + ?Sized>(
    model: &Checkpoint,
    source: &S,
    assignment: &SideInfoAssignment,
    config: &EvalConfig,
) -> Result<LatentDataset> {
    let shots = select_shots(
        source,
        &FewShotPlan {
            shots: config.shots,
            seed: config.seed,
        },
    )?;
    build_fixed(model, source, assignment, &config.plan, &shots, latent_seed(config.seed))
}

/// Builds the latent training set, fits the softmax classifier, and scores
/// it on the seen test split and the unseen samples not released as shots.
///
/// Shot selection, latent sampling and classifier shuffling use separate
/// streams of `config.seed`, so `shots = 0` reproduces plain GZSL exactly.
pub fn evaluate_fewshot<S: GzslSource + ?Sized>(
    model: &Checkpoint,
    source: &S,
    assignment: &SideInfoAssignment,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let shots = select_shots(
        source,
        &FewShotPlan {
            shots: config.shots,
            seed: config.seed,
        },
    )?;
    let hyper = SoftmaxHyper {
        seed: config.seed,
        ..config.hyper
    };
    let classifier = if config.plan.dynamic {
        let stream = DynamicStream::new(model, source, assignment, &shots, hyper.batch_size, latent_seed(config.seed))?;
        let all: Vec<usize> = (0..source.classes().len()).collect();
        train_softmax_dynamic(stream, &all, model.latent_dim, &hyper)?
    } else {
        let train = build_fixed(model, source, assignment, &config.plan, &shots, latent_seed(config.seed))?;
        let mut present = train.labels.clone();
        present.sort_unstable();
        present.dedup();
        train_softmax(&train, &present, &hyper)?
    };

    let seen_rows: Vec<usize> = (0..source.labels(Split::TestSeen).len()).collect();
    let released = shots.all();
    let unseen_rows: Vec<usize> = (0..source.labels(Split::TestUnseen).len())
        .filter(|i| released.binary_search(i).is_err())
        .collect();
    let test_seen = encode_eval_set(model, source, Split::TestSeen, &seen_rows)?;
    let test_unseen = encode_eval_set(model, source, Split::TestUnseen, &unseen_rows)?;
    evaluate_gzsl(&classifier, &test_seen, &test_unseen)
}

/// Generalized zero-shot evaluation (no shots released).
pub fn evaluate_pipeline<S: GzslSource + ?Sized>(
    model: &Checkpoint,
    source: &S,
    assignment: &SideInfoAssignment,
    config: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_fewshot(model, source, assignment, &EvalConfig { shots: 0, ..*config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::numerics::Matrix;
    use crate::vae::ModalityId;
    use proptest::prelude::*;

    #[test]
    fn per_class_not_per_sample() {
        let acc = per_class_accuracy(&[0, 1, 1], &[0, 0, 1], &[0, 1]).unwrap();
        assert_eq!(acc[&0], 0.5);
        assert_eq!(acc[&1], 1.0);
        assert_eq!(mean_of(&acc), 75.0);
        assert!(matches!(per_class_accuracy(&[0], &[0], &[0, 4]), Err(Error::Contract(_))));
    }

    #[test]
    fn all_correct_is_one_everywhere() {
        let labels = [2, 0, 1, 1, 2];
        let acc = per_class_accuracy(&labels, &labels, &[0, 1, 2]).unwrap();
        assert!(acc.values().all(|&a| a == 1.0));
    }

    #[test]
    fn random_predictions_score_near_chance() {
        let mut rng = SeededRng::new(5);
        let n = 200_000;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.below(4)).collect();
        let acc = per_class_accuracy(&preds, &labels, &[0, 1, 2, 3]).unwrap();
        for a in acc.values() {
            assert!((a - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn harmonic_mean_reference_points() {
        assert_eq!(harmonic_mean(50.0, 50.0), 50.0);
        assert_eq!(harmonic_mean(80.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(28.3, 37.6) - 32.3).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn harmonic_mean_is_bounded(s in 0.0f64..100.0, u in 0.0f64..100.0) {
            let h = harmonic_mean(s, u);
            prop_assert!(h <= (s + u) / 2.0 + 1e-9);
            if s + u > 0.0 {
                prop_assert!(h >= s.min(u) - 1e-9 && h <= s.max(u) + 1e-9);
            }
        }

        #[test]
        fn gzsl_report_ignores_test_order(seed in 0u64..1000) {
            let mut rng = SeededRng::new(seed);
            let mut model = SoftmaxParams::zeros(&[0, 1, 2], 2);
            for v in model.weight.data_mut() {
                *v = rng.standard_normal();
            }
            let make = |labels: Vec<usize>, rng: &mut SeededRng| LatentDataset {
                vectors: rng.gaussian_matrix(labels.len(), 2),
                provenance: vec![ModalityId::ImageFeature; labels.len()],
                labels,
            };
            let seen = make(vec![0, 1, 0, 1, 1], &mut rng);
            let unseen = make(vec![2, 2, 2], &mut rng);
            let report = evaluate_gzsl(&model, &seen, &unseen).unwrap();
            let mut order: Vec<usize> = (0..5).collect();
            rng.shuffle(&mut order);
            let shuffled = LatentDataset {
                vectors: seen.vectors.select_rows(&order),
                labels: order.iter().map(|&i| seen.labels[i]).collect(),
                provenance: seen.provenance.clone(),
            };
            prop_assert_eq!(report, evaluate_gzsl(&model, &shuffled, &unseen).unwrap());
        }
    }

    #[test]
    fn zsl_restricts_label_space() {
        let mut model = SoftmaxParams::zeros(&[0, 1, 2], 1);
        model.bias = vec![10.0, 0.0, 0.0];
        model.weight = Matrix::from_vec(3, 1, vec![0.0, 1.0, -1.0]).unwrap();
        let test = LatentDataset {
            vectors: Matrix::from_vec(2, 1, vec![1.0, -1.0]).unwrap(),
            labels: vec![1, 2],
            provenance: vec![ModalityId::ImageFeature; 2],
        };
        let gz = evaluate_gzsl(&model, &LatentDataset::empty(1), &test).unwrap();
        assert_eq!(gz.u, 0.0);
        assert_eq!(evaluate_zsl(&model, &test, &[1, 2]).unwrap(), 100.0);
    }

    #[test]
    fn shot_selection_is_seeded_and_bounded() {
        let ds = synth_generate(&SynthConfig {
            samples_per_class: 12,
            ..SynthConfig::default()
        })
        .unwrap();
        let plan = FewShotPlan { shots: 5, seed: 3 };
        let a = select_shots(&ds, &plan).unwrap();
        assert_eq!(a, select_shots(&ds, &plan).unwrap());
        let labels = &ds.samples(Split::TestUnseen).labels;
        for k in ds.unseen_classes() {
            assert_eq!(a.shots(k).len(), 5);
            assert!(a.shots(k).iter().all(|&i| labels[i] == k));
        }
        assert!(ds.seen_classes().iter().all(|&k| a.shots(k).is_empty()));
        assert!(select_shots(&ds, &FewShotPlan { shots: 12, seed: 3 }).is_err());
        assert!(select_shots(&ds, &FewShotPlan { shots: 0, seed: 3 }).unwrap().is_empty());
    }
}
