//! Random masking for the masked-segment pre-training objective.

use crate::error::{Error, Result};
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

/// Pick which of `real_count` real segments to hide. Returns sorted,
/// distinct indices in `0..real_count`; padding positions are outside that
/// range by construction and can never be selected. At least one segment is
/// always masked (`max(1, round(fraction * real_count))`).
pub fn select_mask(rng: &mut ChaCha8Rng, real_count: usize, fraction: f64) -> Result<Vec<usize>> {
    if real_count == 0 {
        return Err(Error::Data("cannot mask an empty sequence".into()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "mask fraction must be in [0, 1], got {fraction}"
        )));
    }
    let count = ((fraction * real_count as f64).round() as usize)
        .max(1)
        .min(real_count);
    let mut picked = sample(rng, real_count, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn count_follows_rounded_fraction_with_floor_of_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            select_mask(&mut rng, 50, 0.1).unwrap().len(),
            5,
            "10% of 50 segments is 5"
        );
        assert_eq!(
            select_mask(&mut rng, 3, 0.1).unwrap().len(),
            1,
            "rounding to zero still masks one segment"
        );
        assert_eq!(
            select_mask(&mut rng, 14, 0.1).unwrap().len(),
            1,
            "10% of 14 rounds to 1"
        );
        assert_eq!(
            select_mask(&mut rng, 15, 0.1).unwrap().len(),
            2,
            "10% of 15 rounds to 2"
        );
    }

    #[test]
    fn indices_are_sorted_unique_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..1000 {
            let real = 1 + (trial % 120);
            let picked = select_mask(&mut rng, real, 0.1).unwrap();
            assert!(
                picked.windows(2).all(|w| w[0] < w[1]),
                "indices must be strictly increasing (trial {trial})"
            );
            assert!(
                picked.iter().all(|&i| i < real),
                "index out of range with {real} real segments (trial {trial})"
            );
        }
    }

    #[test]
    fn same_seed_selects_same_indices() {
        let a = select_mask(&mut ChaCha8Rng::seed_from_u64(9), 40, 0.25).unwrap();
        let b = select_mask(&mut ChaCha8Rng::seed_from_u64(9), 40, 0.25).unwrap();
        assert_eq!(a, b, "selection must be reproducible from the seed");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(select_mask(&mut rng, 0, 0.1).is_err(), "empty sequence");
        assert!(select_mask(&mut rng, 10, 1.5).is_err(), "fraction above 1");
    }
}
