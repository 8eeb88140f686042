use serde::{Deserialize, Serialize};

use super::ParamSet;

/// Update clipping: entrywise clamp to `[-C, C]`, or rescaling to l2 norm at most `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum GradClip {
    ElementWise(f64),
    L2Norm(f64),
}

impl GradClip {
    pub fn apply(&self, update: &ParamSet) -> ParamSet {
        let mut out = update.clone();
        self.apply_mut(&mut out);
        out
    }

    pub fn apply_mut(&self, update: &mut ParamSet) {
        match *self {
            GradClip::ElementWise(c) => update.for_each_value_mut(|v| *v = v.clamp(-c, c)),
            GradClip::L2Norm(s) => {
                let norm = update.l2_norm();
                // w / max(1, ‖w‖/S)
                let factor = 1.0 / (norm / s).max(1.0);
                if factor < 1.0 {
                    update.scale_mut(factor);
                }
            }
        }
    }
}

/// Clips a flat vector in place; same rules as [`GradClip::apply`].
pub fn clip_slice(values: &mut [f64], clip: GradClip) {
    match clip {
        GradClip::ElementWise(c) => values.iter_mut().for_each(|v| *v = v.clamp(-c, c)),
        GradClip::L2Norm(s) => {
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let factor = 1.0 / (norm / s).max(1.0);
            if factor < 1.0 {
                values.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Param;
    use crate::math::Matrix;
    use proptest::prelude::*;

    fn set(values: Vec<f64>) -> ParamSet {
        let n = values.len();
        ParamSet::new(vec![Param { name: "w".into(), value: Matrix::from_vec(1, n, values).unwrap() }])
    }

    #[test]
    fn l2_examples() {
        let v = set(vec![0.6, 0.8]);
        let c = GradClip::L2Norm(0.5).apply(&v);
        assert!((c.l2_norm() - 0.5).abs() < 1e-15);
        assert_eq!(c.flatten(), vec![0.3, 0.4]);
        let small = set(vec![0.18, 0.24]); // norm 0.3
        assert_eq!(GradClip::L2Norm(0.5).apply(&small), small);
    }

    #[test]
    fn elementwise_example() {
        let c = GradClip::ElementWise(0.2).apply(&set(vec![0.3, -0.5, 0.1]));
        assert_eq!(c.flatten(), vec![0.2, -0.2, 0.1]);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-5.0f64..5.0, 1..20), bound in 0.01f64..3.0) {
            for clip in [GradClip::L2Norm(bound), GradClip::ElementWise(bound)] {
                let once = clip.apply(&set(values.clone()));
                let twice = clip.apply(&once);
                for (a, b) in once.flatten().iter().zip(twice.flatten()) {
                    prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
                }
                match clip {
                    GradClip::L2Norm(s) => prop_assert!(once.l2_norm() <= s * (1.0 + 1e-12)),
                    GradClip::ElementWise(c) => prop_assert!(once.max_abs() <= c),
                }
            }
        }

        #[test]
        fn l2_clip_preserves_direction(values in proptest::collection::vec(-5.0f64..5.0, 2..10)) {
            let v = set(values);
            let c = GradClip::L2Norm(0.5).apply(&v);
            let n0 = v.l2_norm();
            prop_assume!(n0 > 1e-9);
            let cos: f64 = v.flatten().iter().zip(c.flatten()).map(|(a, b)| a * b).sum::<f64>()
                / (n0 * c.l2_norm());
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
    }
}
