use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::{Label, Sample};
use crate::error::{Error, Result};
use crate::funnel::stream_rng;

const DOMAIN_NEGATIVE: u64 = 0x4e45_4753;

/// Keeps every sample positive on `positive` and each negative independently
/// with probability `rate`. Kept negatives are not reweighted.
///
/// One uniform is drawn per input sample, positive or not, so the kept set of
/// negatives depends only on `(seed, position in the input)`.
pub fn negative_sample(
    samples: &[Sample],
    rate: f64,
    positive: Label,
    seed: u64,
) -> Result<Vec<Sample>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::config(
            "negative_sampling_rate",
            format!("{rate} is outside (0, 1]"),
        ));
    }
    let mut rng = stream_rng(seed, DOMAIN_NEGATIVE, 0);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let u: f64 = rng.random();
        if s.label(positive) || u < rate {
            out.push(s.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Labels, SampleFeatures, Split};

    fn sample(i: u32, positive: bool) -> Sample {
        Sample {
            user_id: 0,
            item_id: i,
            timestamp: 0,
            pv: true,
            features: SampleFeatures {
                user: [0, 0],
                item: [i, 0],
                context: [0, 0],
            },
            sequence: Vec::new(),
            labels: Labels {
                click: positive,
                pay_g: positive,
                pay_a: positive,
            },
            split: Split::Train,
        }
    }

    #[test]
    fn full_rate_is_identity() {
        let input: Vec<Sample> = (0..50).map(|i| sample(i, i % 7 == 0)).collect();
        assert_eq!(negative_sample(&input, 1.0, Label::PayA, 3).unwrap(), input);
    }

    #[test]
    fn positives_are_always_kept() {
        let input: Vec<Sample> = (0..200).map(|i| sample(i, true)).collect();
        assert_eq!(
            negative_sample(&input, 0.01, Label::PayG, 3).unwrap(),
            input
        );
    }

    #[test]
    fn kept_negative_count_within_binomial_bounds() {
        // Binomial(10_000, 0.1): mean 1000, sd 30, so ±5σ is [850, 1150].
        let input: Vec<Sample> = (0..10_000).map(|i| sample(i, false)).collect();
        let kept = negative_sample(&input, 0.1, Label::PayA, 17).unwrap();
        assert!((850..=1150).contains(&kept.len()), "{}", kept.len());
        assert_eq!(kept, negative_sample(&input, 0.1, Label::PayA, 17).unwrap());
    }

    #[test]
    fn rate_outside_unit_interval_is_rejected() {
        let input = [sample(0, false)];
        for rate in [0.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                negative_sample(&input, rate, Label::PayA, 0),
                Err(Error::Config {
                    field: "negative_sampling_rate",
                    ..
                })
            ));
        }
    }
}
