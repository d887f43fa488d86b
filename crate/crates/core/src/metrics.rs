//! Class-wise robust fairness and adversarial over-confidence diagnostics.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{run_pgd_batch, AttackConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, true_class_confidence, Classifier, Mode};
use crate::scalar::Scalar;

/// Evaluation record of one test example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerExampleOutcome {
    pub label: usize,
    pub clean_prediction: usize,
    /// Prediction at the final attack iterate.
    pub adversarial_prediction: usize,
    pub clean_confidence: f64,
    pub adversarial_confidence: f64,
    /// First attack step whose prediction is wrong; `None` if never.
    pub minimal_step: Option<usize>,
}

impl PerExampleOutcome {
    pub fn clean_correct(&self) -> bool {
        self.clean_prediction == self.label
    }

    pub fn robust_correct(&self) -> bool {
        self.clean_correct() && self.adversarial_prediction == self.label
    }

    /// Adversarial confidence strictly above the clean one.
    pub fn over_confident(&self) -> bool {
        self.adversarial_confidence > self.clean_confidence
    }
}

const EVAL_CHUNK: usize = 256;

/// Attacks every example of `dataset` and records clean and adversarial outcomes.
pub fn collect_outcomes<T: Scalar, R: Rng + ?Sized>(
    model: &Classifier<T>,
    dataset: &Dataset,
    attack: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<PerExampleOutcome>> {
    let k = model.num_classes();
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let images = dataset.gather_images::<T>(chunk);
        let labels = dataset.gather_labels(chunk);
        let clean = model.forward_flat(&images, Mode::Eval)?;
        let trajectories = run_pgd_batch(model, &images, &labels, attack, false, None, rng)?;
        for ((row, t), &y) in clean.chunks_exact(k).zip(&trajectories).zip(&labels) {
            out.push(PerExampleOutcome {
                label: y,
                clean_prediction: argmax(row),
                adversarial_prediction: t.prediction(),
                clean_confidence: true_class_confidence(row, y)?,
                adversarial_confidence: true_class_confidence(&t.last_logits, y)?,
                minimal_step: t.crossing_step,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorTriple {
    pub standard: f64,
    pub boundary: f64,
    pub robust: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassErrors {
    pub class: usize,
    pub count: usize,
    pub standard: f64,
    pub boundary: f64,
    pub robust: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_class: Vec<ClassErrors>,
    /// Unweighted means over classes.
    pub average: ErrorTriple,
    /// Maxima over classes.
    pub worst: ErrorTriple,
    /// Population standard deviation of per-class robust accuracy.
    pub robust_accuracy_std: f64,
}

fn mean_within_range(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (values.iter().sum::<f64>() / values.len() as f64).clamp(min, max)
}

/// Robust error is stored as `standard + boundary` so the identity holds
/// exactly in floating point; it is within one ulp of the raw fraction.
pub fn fairness_report(outcomes: &[PerExampleOutcome], num_classes: usize) -> Result<FairnessReport> {
    let mut count = vec![0usize; num_classes];
    let mut std_wrong = vec![0usize; num_classes];
    let mut rob_wrong = vec![0usize; num_classes];
    for o in outcomes {
        if o.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: o.label,
                num_classes,
            });
        }
        count[o.label] += 1;
        std_wrong[o.label] += usize::from(!o.clean_correct());
        rob_wrong[o.label] += usize::from(!o.robust_correct());
    }
    if let Some(c) = count.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let per_class: Vec<ClassErrors> = (0..num_classes)
        .map(|c| {
            let n = count[c] as f64;
            let standard = std_wrong[c] as f64 / n;
            let boundary = (rob_wrong[c] - std_wrong[c]) as f64 / n;
            ClassErrors {
                class: c,
                count: count[c],
                standard,
                boundary,
                robust: standard + boundary,
            }
        })
        .collect();
    let column = |f: fn(&ClassErrors) -> f64| per_class.iter().map(f).collect::<Vec<f64>>();
    let (stds, bndys, robs) = (column(|c| c.standard), column(|c| c.boundary), column(|c| c.robust));
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let avg_std = mean_within_range(&stds);
    let avg_bndy = mean_within_range(&bndys);
    let average = ErrorTriple {
        standard: avg_std,
        boundary: avg_bndy,
        robust: avg_std + avg_bndy,
    };
    let worst = ErrorTriple {
        standard: max(&stds),
        boundary: max(&bndys),
        // The sum of two means can round an ulp above the largest class value.
        robust: max(&robs).max(average.robust),
    };
    let acc: Vec<f64> = robs.iter().map(|r| 1.0 - r).collect();
    let robust_accuracy_std = if acc.iter().all(|&a| a == acc[0]) {
        0.0
    } else {
        let m = acc.iter().sum::<f64>() / acc.len() as f64;
        (acc.iter().map(|a| (a - m).powi(2)).sum::<f64>() / acc.len() as f64).sqrt()
    };
    Ok(FairnessReport {
        per_class,
        average,
        worst,
        robust_accuracy_std,
    })
}

impl FairnessReport {
    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    /// Six-column summary plus the robust-accuracy standard deviation.
    pub fn summary_csv(&self) -> String {
        let a = &self.average;
        let w = &self.worst;
        format!(
            "avg_standard,avg_boundary,avg_robust,worst_standard,worst_boundary,worst_robust,robust_accuracy_std\n\
             {},{},{},{},{},{},{}\n",
            a.standard, a.boundary, a.robust, w.standard, w.boundary, w.robust, self.robust_accuracy_std
        )
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,count,standard,boundary,robust\n");
        for c in &self.per_class {
            writeln!(s, "{},{},{},{},{}", c.class, c.count, c.standard, c.boundary, c.robust).expect("string write");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub clean_confidence: f64,
    pub adversarial_confidence: f64,
    pub class: usize,
    pub over_confident: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverconfidenceReport {
    /// Per class, fraction with adversarial confidence above clean confidence.
    pub per_class_proportion: Vec<f64>,
    pub points: Vec<ScatterPoint>,
}

pub fn overconfidence_report(outcomes: &[PerExampleOutcome], num_classes: usize) -> Result<OverconfidenceReport> {
    let mut count = vec![0usize; num_classes];
    let mut over = vec![0usize; num_classes];
    let mut points = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if o.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: o.label,
                num_classes,
            });
        }
        let flag = o.over_confident();
        count[o.label] += 1;
        over[o.label] += usize::from(flag);
        points.push(ScatterPoint {
            clean_confidence: o.clean_confidence,
            adversarial_confidence: o.adversarial_confidence,
            class: o.label,
            over_confident: flag,
        });
    }
    let per_class_proportion = count
        .iter()
        .zip(&over)
        .map(|(&n, &k)| if n == 0 { 0.0 } else { k as f64 / n as f64 })
        .collect();
    Ok(OverconfidenceReport {
        per_class_proportion,
        points,
    })
}

impl OverconfidenceReport {
    /// One point per line: `clean_conf adv_conf class over_conf_flag`.
    pub fn scatter_lines(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            writeln!(
                s,
                "{} {} {} {}",
                p.clean_confidence,
                p.adversarial_confidence,
                p.class,
                u8::from(p.over_confident)
            )
            .expect("string write");
        }
        s
    }
}

/// Distribution of the first successful attack step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepHistogram {
    /// `counts[s - 1]` examples first crossed at step `s`, for `s` in `1..=K`.
    pub counts: Vec<u64>,
    pub never: u64,
}

impl StepHistogram {
    pub fn new(outcomes: &[PerExampleOutcome], steps: usize) -> Result<Self> {
        let mut counts = vec![0u64; steps];
        let mut never = 0;
        for o in outcomes {
            match o.minimal_step {
                None => never += 1,
                Some(s) if (1..=steps).contains(&s) => counts[s - 1] += 1,
                Some(s) => return Err(Error::Config(format!("minimal step {s} outside 1..={steps}"))),
            }
        }
        Ok(Self { counts, never })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.never
    }

    /// Fraction not yet crossed after `m` steps.
    pub fn easy_fraction_at(&self, m: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let crossed: u64 = self.counts.iter().take(m).sum();
        (total - crossed) as f64 / total as f64
    }

    /// One bucket per line: `step count`, with `never` last.
    pub fn lines(&self) -> String {
        let mut s = String::new();
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(s, "{} {c}", i + 1).expect("string write");
        }
        writeln!(s, "never {}", self.never).expect("string write");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(label: usize, clean: usize, adv: usize) -> PerExampleOutcome {
        PerExampleOutcome {
            label,
            clean_prediction: clean,
            adversarial_prediction: adv,
            clean_confidence: 0.5,
            adversarial_confidence: 0.5,
            minimal_step: (adv != label).then_some(1),
        }
    }

    /// Per class `n` examples, the first `s` clean-wrong, the next `b` clean-right but adversarially wrong.
    fn block(class: usize, n: usize, s: usize, b: usize, other: usize) -> Vec<PerExampleOutcome> {
        (0..n)
            .map(|i| {
                if i < s {
                    outcome(class, other, other)
                } else if i < s + b {
                    outcome(class, class, other)
                } else {
                    outcome(class, class, class)
                }
            })
            .collect()
    }

    #[test]
    fn equal_errors_have_zero_spread() {
        let mut v = Vec::new();
        for c in 0..10 {
            v.extend(block(c, 10, 1, 1, (c + 1) % 10));
        }
        let r = fairness_report(&v, 10).unwrap();
        assert_eq!(r.average.robust, 0.2);
        assert_eq!(r.worst.robust, 0.2);
        assert_eq!(r.robust_accuracy_std, 0.0);
        assert!(r.worst.standard >= r.average.standard);
    }

    #[test]
    fn worst_and_average() {
        let mut v = block(0, 10, 0, 1, 1);
        v.extend(block(1, 10, 1, 1, 2));
        v.extend(block(2, 10, 3, 3, 0));
        let r = fairness_report(&v, 3).unwrap();
        assert_eq!(r.worst.robust, 0.6);
        assert!((r.average.robust - 0.3).abs() < 1e-15);
        for c in &r.per_class {
            assert_eq!(c.standard + c.boundary, c.robust);
        }
        assert_eq!(r.average.standard + r.average.boundary, r.average.robust);
    }

    #[test]
    fn pgd_at_row_identity() {
        // 10 classes x 1000 examples; 1538 clean errors and 4124 boundary errors in total.
        let std_per_class = [150, 160, 140, 170, 155, 150, 148, 152, 160, 153];
        let bndy_per_class = [400, 420, 410, 415, 405, 425, 410, 412, 418, 409];
        assert_eq!(std_per_class.iter().sum::<usize>(), 1538);
        assert_eq!(bndy_per_class.iter().sum::<usize>(), 4124);
        let mut v = Vec::new();
        for c in 0..10 {
            v.extend(block(c, 1000, std_per_class[c], bndy_per_class[c], (c + 1) % 10));
        }
        let r = fairness_report(&v, 10).unwrap();
        let pct = |x: f64| (x * 10_000.0).round() / 100.0;
        assert_eq!(pct(r.average.standard), 15.38);
        assert_eq!(pct(r.average.boundary), 41.24);
        assert_eq!(pct(r.average.robust), 56.62);
        assert_eq!(r.average.standard + r.average.boundary, r.average.robust);
    }

    #[test]
    fn empty_class_is_named() {
        let v = block(0, 5, 1, 1, 1);
        assert!(matches!(fairness_report(&v, 2), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn identity_is_exact_for_awkward_fractions() {
        for n in 1..120usize {
            for a in 0..=n {
                for b in 0..=a {
                    let v = block(0, n, b, a - b, 1);
                    let r = fairness_report(&v, 1).unwrap();
                    let c = r.per_class[0];
                    assert_eq!(c.standard + c.boundary, c.robust);
                    assert!((c.robust - a as f64 / n as f64).abs() <= f64::EPSILON);
                }
            }
        }
    }

    #[test]
    fn overconfidence_counts() {
        let mut a = outcome(0, 0, 0);
        a.clean_confidence = 0.9;
        a.adversarial_confidence = 0.95;
        let mut b = outcome(0, 0, 0);
        b.clean_confidence = 0.8;
        b.adversarial_confidence = 0.7;
        let tie = outcome(1, 1, 1);
        let r = overconfidence_report(&[a, b, tie], 2).unwrap();
        assert_eq!(r.per_class_proportion, vec![0.5, 0.0]);
        assert_eq!(r.scatter_lines().lines().next().unwrap(), "0.9 0.95 0 1");
    }

    #[test]
    fn histogram_partition_and_easy_fraction() {
        let mut v: Vec<PerExampleOutcome> = (0..4).map(|_| outcome(0, 0, 0)).collect();
        for s in [1, 2, 2, 5, 10, 10] {
            let mut o = outcome(0, 0, 1);
            o.minimal_step = Some(s);
            v.push(o);
        }
        let h = StepHistogram::new(&v, 10).unwrap();
        assert_eq!(h.total(), 10);
        assert_eq!(h.never, 4);
        assert_eq!(h.counts[1], 2);
        assert_eq!(h.easy_fraction_at(3), 0.7);
        assert_eq!(h.easy_fraction_at(10), 0.4);
        let never = StepHistogram::new(&v[..4], 10).unwrap();
        assert_eq!(never.counts.iter().sum::<u64>(), 0);
        assert_eq!(never.never, 4);
    }

    #[test]
    fn csv_agrees_with_json() {
        let mut v = block(0, 7, 1, 2, 1);
        v.extend(block(1, 3, 1, 0, 0));
        let r = fairness_report(&v, 2).unwrap();
        let json: serde_json::Value = serde_json::to_value(&r).unwrap();
        let csv = r.summary_csv();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[2], json["average"]["robust"].as_f64().unwrap());
        assert_eq!(row[4], json["worst"]["boundary"].as_f64().unwrap());
        assert_eq!(row[6], json["robust_accuracy_std"].as_f64().unwrap());
    }
}
