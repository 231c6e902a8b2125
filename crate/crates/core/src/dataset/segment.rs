//! Stand-in for a learned semantic segmenter: corrupts true labels at a
//! controlled rate and softens them toward uniform.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::SemanticCloud;

/// `flip_rate` is the probability of replacing a label by a uniformly chosen
/// wrong class; `confidence` in `[0, 1]` blends the one-hot vector with the
/// uniform distribution, `confidence * onehot + (1 - confidence) / C`.
pub fn oracle_segment(
    positions: &[[f64; 3]],
    labels: &[usize],
    class_count: usize,
    flip_rate: f64,
    confidence: f64,
    rng: &mut impl Rng,
) -> Result<SemanticCloud> {
    if !(0.0..1.0).contains(&flip_rate) {
        return Err(Error::invalid(format!("flip rate must lie in [0, 1), got {flip_rate}")));
    }
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::invalid(format!("confidence must lie in [0, 1], got {confidence}")));
    }
    Error::check_len("segment labels", positions.len(), labels.len())?;
    if let Some(&l) = labels.iter().find(|&&l| l >= class_count) {
        return Err(Error::invalid(format!("label {l} exceeds class count {class_count}")));
    }
    let floor = (1.0 - confidence) / class_count as f64;
    let mut semantics = Vec::with_capacity(labels.len() * class_count);
    for &label in labels {
        let mut chosen = label;
        if class_count > 1 && flip_rate > 0.0 && rng.random::<f64>() < flip_rate {
            let other = rng.random_range(0..class_count - 1);
            chosen = if other >= label { other + 1 } else { other };
        }
        for c in 0..class_count {
            semantics.push(if c == chosen { confidence + floor } else { floor });
        }
    }
    SemanticCloud::new(class_count, positions.to_vec(), semantics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_when_not_flipping() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = vec![[0.0; 3]; 4];
        let cloud = oracle_segment(&pos, &[0, 2, 1, 2], 3, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(cloud.labels(), vec![0, 2, 1, 2]);
        assert_eq!(cloud.semantics_of(1), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_confidence_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cloud = oracle_segment(&[[0.0; 3]], &[1], 4, 0.3, 0.0, &mut rng).unwrap();
        assert_eq!(cloud.semantics_of(0), &[0.25; 4]);
    }

    #[test]
    fn flip_fraction_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let labels: Vec<usize> = (0..n).map(|i| i % 5).collect();
        let cloud = oracle_segment(&vec![[0.0; 3]; n], &labels, 5, 0.2, 1.0, &mut rng).unwrap();
        let flipped = cloud.labels().iter().zip(&labels).filter(|(a, b)| a != b).count();
        let frac = flipped as f64 / n as f64;
        assert!((frac - 0.2).abs() < 0.01, "{frac}");
    }

    #[test]
    fn invalid_rates_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(oracle_segment(&[[0.0; 3]], &[0], 2, 1.0, 1.0, &mut rng).is_err());
        assert!(oracle_segment(&[[0.0; 3]], &[0], 2, -0.1, 1.0, &mut rng).is_err());
        assert!(oracle_segment(&[[0.0; 3]], &[0], 2, 0.1, 1.5, &mut rng).is_err());
        assert!(oracle_segment(&[[0.0; 3]], &[2], 2, 0.1, 1.0, &mut rng).is_err());
    }
}
