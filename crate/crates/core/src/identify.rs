//! Exact identification arithmetic for the binary worked example.
//!
//! Without a proxy, the joint p(ẑ, r | a) is underdetermined: three
//! constraints on four unknowns leave one degree of freedom, so the
//! adjusted potential outcome is only known to lie in an interval. The
//! two extra conditional-on-proxy feedback marginals close the system to
//! a unique solution whenever the proxy stays correlated with ẑ given a.

use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

/// All observed marginals/conditionals of the binary scenario.
#[derive(Debug, Clone)]
pub struct DiscreteScenario {
    /// p(ẑ = 1)
    pub p_z1: f64,
    /// p(ẑ = 1 | a)
    pub p_z1_given_a: f64,
    /// p(r = 1 | a)
    pub p_r1_given_a: f64,
    pub proxy: Option<ProxyMarginals>,
}

/// The two conditional-on-proxy blocks, indexed by w ∈ {0, 1}.
#[derive(Debug, Clone)]
pub struct ProxyMarginals {
    /// p(ẑ = 1 | a, w)
    pub p_z1_given_aw: [f64; 2],
    /// p(r = 1 | a, w)
    pub p_r1_given_aw: [f64; 2],
}

/// The four unknowns p(ẑ = z, r | a), indexed as `p[z][r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub p: [[f64; 2]; 2],
}

impl JointTable {
    pub fn new(p: [[f64; 2]; 2]) -> Result<Self> {
        let sum: f64 = p.iter().flatten().sum();
        if p.iter().flatten().any(|&v| v < -TOL) {
            return Err(Error::Domain("negative joint entry".into()));
        }
        if (sum - 1.0).abs() > TOL {
            return Err(Error::Domain(format!("joint entries sum to {sum}, not 1")));
        }
        Ok(JointTable { p })
    }
}

/// Feasible ranges when the proxy block is absent: bounds on the free
/// variable p(ẑ=1, r=1 | a) and on the adjusted potential outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleInterval {
    pub p11: (f64, f64),
    pub outcome: (f64, f64),
}

/// Result of the uniqueness precondition for the proxy-based solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniquenessCheck {
    pub identifiable: bool,
    /// |p(ẑ=1|a,w=1) − p(ẑ=1|a,w=0)|
    pub margin: f64,
}

fn check_probability(value: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || !value.is_finite() {
        return Err(Error::Domain(format!("{name} = {value} not in [0, 1]")));
    }
    Ok(())
}

impl DiscreteScenario {
    pub fn validate(&self) -> Result<()> {
        check_probability(self.p_z1, "p(z=1)")?;
        check_probability(self.p_z1_given_a, "p(z=1|a)")?;
        check_probability(self.p_r1_given_a, "p(r=1|a)")?;
        if self.p_z1_given_a < TOL || self.p_z1_given_a > 1.0 - TOL {
            return Err(Error::Degenerate(format!(
                "p(z=1|a) = {} is degenerate",
                self.p_z1_given_a
            )));
        }
        if let Some(proxy) = &self.proxy {
            for w in 0..2 {
                check_probability(proxy.p_z1_given_aw[w], "p(z=1|a,w)")?;
                check_probability(proxy.p_r1_given_aw[w], "p(r=1|a,w)")?;
            }
        }
        Ok(())
    }
}

/// Adjusted potential outcome for a joint consistent with the scenario:
/// p(r^a = 1) = (1−π_z1)·p01/(1−π_z1|a) + π_z1·p11/π_z1|a.
pub fn potential_outcome_from_joint(
    scenario: &DiscreteScenario,
    joint: &JointTable,
) -> Result<f64> {
    scenario.validate()?;
    let p = &joint.p;
    let total: f64 = p.iter().flatten().sum();
    let z1_marginal = p[1][0] + p[1][1];
    let r1_marginal = p[0][1] + p[1][1];
    if (total - 1.0).abs() > TOL
        || (z1_marginal - scenario.p_z1_given_a).abs() > TOL
        || (r1_marginal - scenario.p_r1_given_a).abs() > TOL
    {
        return Err(Error::Inconsistent(format!(
            "joint marginals (sum {total}, z1 {z1_marginal}, r1 {r1_marginal}) \
             do not match the scenario"
        )));
    }
    let pi_z1 = scenario.p_z1;
    let pi_z1_a = scenario.p_z1_given_a;
    Ok((1.0 - pi_z1) * p[0][1] / (1.0 - pi_z1_a) + pi_z1 * p[1][1] / pi_z1_a)
}

/// Evaluates the adjustment at a candidate value of the free variable p11.
/// The map is affine in p11: p01 = π_r1|a − p11.
fn outcome_at_p11(scenario: &DiscreteScenario, p11: f64) -> f64 {
    let p01 = scenario.p_r1_given_a - p11;
    (1.0 - scenario.p_z1) * p01 / (1.0 - scenario.p_z1_given_a)
        + scenario.p_z1 * p11 / scenario.p_z1_given_a
}

/// Bounds on p11 and the induced potential-outcome interval when only the
/// three proxy-free marginals are known.
pub fn feasible_interval_no_proxy(scenario: &DiscreteScenario) -> Result<FeasibleInterval> {
    scenario.validate()?;
    if scenario.proxy.is_some() {
        return Err(Error::Domain(
            "feasible_interval_no_proxy requires a scenario without a proxy block".into(),
        ));
    }
    let pi_z1_a = scenario.p_z1_given_a;
    let pi_r1_a = scenario.p_r1_given_a;
    let lo = (pi_z1_a + pi_r1_a - 1.0).max(0.0);
    let hi = pi_z1_a.min(pi_r1_a);
    // lo ≤ hi always holds for probabilities in [0,1].
    let (a, b) = (outcome_at_p11(scenario, lo), outcome_at_p11(scenario, hi));
    Ok(FeasibleInterval {
        p11: (lo, hi),
        outcome: (a.min(b), a.max(b)),
    })
}

/// Whether the proxy keeps the 4×4 system nonsingular:
/// |p(ẑ=1|a,w=1) − p(ẑ=1|a,w=0)| must exceed 1e-9.
pub fn check_uniqueness(scenario: &DiscreteScenario) -> Result<UniquenessCheck> {
    scenario.validate()?;
    let proxy = scenario
        .proxy
        .as_ref()
        .ok_or_else(|| Error::Domain("check_uniqueness requires a proxy block".into()))?;
    let margin = (proxy.p_z1_given_aw[1] - proxy.p_z1_given_aw[0]).abs();
    Ok(UniquenessCheck {
        identifiable: margin > TOL,
        margin,
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn gauss_solve(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let factor = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Solves the four-constraint linear system for the unique joint
/// p(ẑ, r | a). Unknown order: [p00, p01, p10, p11].
pub fn solve_with_proxy(scenario: &DiscreteScenario) -> Result<JointTable> {
    let check = check_uniqueness(scenario)?;
    if !check.identifiable {
        return Err(Error::NonIdentifiable(format!(
            "uniqueness condition violated: |p(z=1|a,w=1) - p(z=1|a,w=0)| = {:.3e} <= {TOL:e}",
            check.margin
        )));
    }
    let proxy = scenario.proxy.as_ref().unwrap();
    let pi_z1_a = scenario.p_z1_given_a;
    let pi_z0_a = 1.0 - pi_z1_a;

    let mut a = [[0.0; 4]; 4];
    let mut b = [0.0; 4];
    // Normalization.
    a[0] = [1.0, 1.0, 1.0, 1.0];
    b[0] = 1.0;
    // z-marginal: p10 + p11 = π_z1|a.
    a[1] = [0.0, 0.0, 1.0, 1.0];
    b[1] = pi_z1_a;
    // Conditional-on-w feedback constraints:
    // p01·π_z0|aw/π_z0|a + p11·π_z1|aw/π_z1|a = π_r1|aw.
    for w in 0..2 {
        let pi_z1_aw = proxy.p_z1_given_aw[w];
        a[2 + w] = [
            0.0,
            (1.0 - pi_z1_aw) / pi_z0_a,
            0.0,
            pi_z1_aw / pi_z1_a,
        ];
        b[2 + w] = proxy.p_r1_given_aw[w];
    }

    let x = gauss_solve(a, b).ok_or_else(|| {
        Error::NonIdentifiable("singular constraint system despite uniqueness margin".into())
    })?;

    for (idx, &v) in x.iter().enumerate() {
        if !(-TOL..=1.0 + TOL).contains(&v) {
            return Err(Error::Inconsistent(format!(
                "solution entry {idx} = {v} outside [0, 1]; the supplied marginals \
                 are mutually inconsistent"
            )));
        }
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let joint = JointTable {
        p: [[clamp(x[0]), clamp(x[1])], [clamp(x[2]), clamp(x[3])]],
    };

    // Residual sanity on the original system.
    for row in 0..4 {
        let lhs: f64 = (0..4).map(|c| a[row][c] * x[c]).sum();
        if (lhs - b[row]).abs() > 1e-10 {
            return Err(Error::Numeric(format!(
                "solver residual {:.3e} on constraint {row}",
                (lhs - b[row]).abs()
            )));
        }
    }
    Ok(joint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn example_scenario() -> DiscreteScenario {
        DiscreteScenario {
            p_z1: 0.5,
            p_z1_given_a: 0.2,
            p_r1_given_a: 0.6,
            proxy: None,
        }
    }

    /// Forward-constructs a scenario from primitive conditionals
    /// p(z=1|a), p(w=1|z,a), p(r=1|z,a) and a free p(z=1) marginal.
    /// Returns the scenario plus the implied joint and ground-truth outcome.
    /// This is the independent oracle: it never calls the solver.
    pub(super) fn forward_construct(
        p_z1: f64,
        p_z1_a: f64,
        p_w1_given_z: [f64; 2],
        p_r1_given_z: [f64; 2],
    ) -> (DiscreteScenario, JointTable, f64) {
        let p_z = [1.0 - p_z1_a, p_z1_a];
        // p(w=w') = Σ_z p(z)·p(w'|z); p(z|w') by Bayes.
        let mut p_z1_given_aw = [0.0; 2];
        let mut p_r1_given_aw = [0.0; 2];
        for w in 0..2 {
            let p_w_given_z =
                |z: usize| if w == 1 { p_w1_given_z[z] } else { 1.0 - p_w1_given_z[z] };
            let p_w: f64 = (0..2).map(|z| p_z[z] * p_w_given_z(z)).sum();
            p_z1_given_aw[w] = p_z[1] * p_w_given_z(1) / p_w;
            // r ⊥ w | (z, a): p(r=1|a,w) = Σ_z p(r=1|z,a)·p(z|a,w).
            let p_z_given_w = [1.0 - p_z1_given_aw[w], p_z1_given_aw[w]];
            p_r1_given_aw[w] = (0..2).map(|z| p_r1_given_z[z] * p_z_given_w[z]).sum();
        }
        let p_r1_a: f64 = (0..2).map(|z| p_r1_given_z[z] * p_z[z]).sum();
        let joint = JointTable {
            p: [
                [p_z[0] * (1.0 - p_r1_given_z[0]), p_z[0] * p_r1_given_z[0]],
                [p_z[1] * (1.0 - p_r1_given_z[1]), p_z[1] * p_r1_given_z[1]],
            ],
        };
        let truth = (1.0 - p_z1) * p_r1_given_z[0] + p_z1 * p_r1_given_z[1];
        let scenario = DiscreteScenario {
            p_z1,
            p_z1_given_a: p_z1_a,
            p_r1_given_a: p_r1_a,
            proxy: Some(ProxyMarginals {
                p_z1_given_aw,
                p_r1_given_aw,
            }),
        };
        (scenario, joint, truth)
    }

    #[test]
    fn no_confounding_makes_adjustment_a_noop() {
        // Independence: p(z,r|a) = p(z|a)·p(r|a) and π_z1 = π_z1|a.
        let scenario = DiscreteScenario {
            p_z1: 0.2,
            p_z1_given_a: 0.2,
            p_r1_given_a: 0.6,
            proxy: None,
        };
        let joint = JointTable::new([[0.8 * 0.4, 0.8 * 0.6], [0.2 * 0.4, 0.2 * 0.6]]).unwrap();
        let out = potential_outcome_from_joint(&scenario, &joint).unwrap();
        assert!((out - 0.6).abs() < 1e-12);
    }

    #[test]
    fn direct_formula_evaluation() {
        let scenario = example_scenario();
        // p01 = 0.6, p11 = 0 ⇒ outcome = 0.5·0.6/0.8 = 0.375
        let joint = JointTable::new([[0.2, 0.6], [0.2, 0.0]]).unwrap();
        let out = potential_outcome_from_joint(&scenario, &joint).unwrap();
        assert!((out - 0.375).abs() < 1e-12);
    }

    #[test]
    fn potential_outcome_matches_brute_force_expectation() {
        let mut rng = RngStream::new(21, "po-brute");
        for _ in 0..200 {
            let p_z1_a = rng.uniform(0.05, 0.95);
            let p_r1_z = [rng.uniform01(), rng.uniform01()];
            let p_z1 = rng.uniform01();
            let joint = JointTable::new([
                [
                    (1.0 - p_z1_a) * (1.0 - p_r1_z[0]),
                    (1.0 - p_z1_a) * p_r1_z[0],
                ],
                [p_z1_a * (1.0 - p_r1_z[1]), p_z1_a * p_r1_z[1]],
            ])
            .unwrap();
            let scenario = DiscreteScenario {
                p_z1,
                p_z1_given_a: p_z1_a,
                p_r1_given_a: joint.p[0][1] + joint.p[1][1],
                proxy: None,
            };
            let out = potential_outcome_from_joint(&scenario, &joint).unwrap();
            // Brute force: Σ_z p(z)·p(r=1|z,a) from the same table.
            let brute = (1.0 - p_z1) * joint.p[0][1] / (1.0 - p_z1_a)
                + p_z1 * joint.p[1][1] / p_z1_a;
            assert!((out - brute).abs() <= 1e-12);
        }
    }

    #[test]
    fn inconsistent_joint_is_rejected() {
        let scenario = example_scenario();
        let joint = JointTable::new([[0.25, 0.25], [0.25, 0.25]]).unwrap();
        assert!(matches!(
            potential_outcome_from_joint(&scenario, &joint),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn no_positive_feedback_collapses_interval() {
        let scenario = DiscreteScenario {
            p_r1_given_a: 0.0,
            ..example_scenario()
        };
        let interval = feasible_interval_no_proxy(&scenario).unwrap();
        assert_eq!(interval.p11, (0.0, 0.0));
        assert!((interval.outcome.0 - interval.outcome.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_scenario_errors() {
        let scenario = DiscreteScenario {
            p_z1_given_a: 1.0,
            ..example_scenario()
        };
        assert!(matches!(
            feasible_interval_no_proxy(&scenario),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn worked_example_interval_matches_grid_enumeration() {
        let scenario = example_scenario();
        let interval = feasible_interval_no_proxy(&scenario).unwrap();
        assert!((interval.p11.0 - 0.0).abs() < 1e-12);
        assert!((interval.p11.1 - 0.2).abs() < 1e-12);
        assert!((interval.outcome.0 - 0.375).abs() < 1e-12);
        assert!((interval.outcome.1 - 0.75).abs() < 1e-12);

        // Brute-force oracle: scan p11 candidates, keep those whose implied
        // joint is a valid probability table, track the outcome range.
        let n = 1_000_000;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let (mut p11_lo, mut p11_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=n {
            let p11 = k as f64 / n as f64;
            let p01 = scenario.p_r1_given_a - p11;
            let p10 = scenario.p_z1_given_a - p11;
            let p00 = 1.0 - p01 - p10 - p11;
            if p01 >= 0.0 && p10 >= 0.0 && p00 >= 0.0 && p11 <= 1.0 {
                let out = (1.0 - scenario.p_z1) * p01 / (1.0 - scenario.p_z1_given_a)
                    + scenario.p_z1 * p11 / scenario.p_z1_given_a;
                lo = lo.min(out);
                hi = hi.max(out);
                p11_lo = p11_lo.min(p11);
                p11_hi = p11_hi.max(p11);
            }
        }
        assert!((interval.p11.0 - p11_lo).abs() < 1e-6);
        assert!((interval.p11.1 - p11_hi).abs() < 1e-6);
        assert!((interval.outcome.0 - lo).abs() < 1e-6);
        assert!((interval.outcome.1 - hi).abs() < 1e-6);
    }

    #[test]
    fn proxy_solver_recovers_forward_constructed_joint() {
        let mut rng = RngStream::new(31, "solver-roundtrip");
        for _ in 0..500 {
            let (scenario, joint, _) = forward_construct(
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
                [rng.uniform(0.05, 0.45), rng.uniform(0.55, 0.95)],
                [rng.uniform01(), rng.uniform01()],
            );
            let solved = solve_with_proxy(&scenario).unwrap();
            for z in 0..2 {
                for r in 0..2 {
                    assert!(
                        (solved.p[z][r] - joint.p[z][r]).abs() < 1e-10,
                        "entry ({z},{r}): {} vs {}",
                        solved.p[z][r],
                        joint.p[z][r]
                    );
                }
            }
        }
    }

    #[test]
    fn adjusted_outcome_equals_ground_truth() {
        let mut rng = RngStream::new(32, "solver-outcome");
        for _ in 0..500 {
            let (scenario, _, truth) = forward_construct(
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
                [rng.uniform(0.05, 0.45), rng.uniform(0.55, 0.95)],
                [rng.uniform01(), rng.uniform01()],
            );
            let solved = solve_with_proxy(&scenario).unwrap();
            let out = potential_outcome_from_joint(&scenario, &solved).unwrap();
            assert!((out - truth).abs() < 1e-9, "{out} vs {truth}");
        }
    }

    #[test]
    fn uninformative_proxy_is_non_identifiable() {
        let (mut scenario, _, _) =
            forward_construct(0.5, 0.3, [0.4, 0.8], [0.2, 0.7]);
        // Force equal conditionals: proxy independent of ẑ given a.
        let proxy = scenario.proxy.as_mut().unwrap();
        proxy.p_z1_given_aw = [0.3, 0.3];
        let check = check_uniqueness(&scenario).unwrap();
        assert!(!check.identifiable);
        assert_eq!(check.margin, 0.0);
        assert!(matches!(
            solve_with_proxy(&scenario),
            Err(Error::NonIdentifiable(_))
        ));
    }

    #[test]
    fn uniqueness_margin_is_reported() {
        let scenario = DiscreteScenario {
            p_z1: 0.5,
            p_z1_given_a: 0.5,
            p_r1_given_a: 0.5,
            proxy: Some(ProxyMarginals {
                p_z1_given_aw: [0.3, 0.7],
                p_r1_given_aw: [0.5, 0.5],
            }),
        };
        let check = check_uniqueness(&scenario).unwrap();
        assert!(check.identifiable);
        assert!((check.margin - 0.4).abs() < 1e-12);
    }

    #[test]
    fn no_confounding_solution_factorizes() {
        let mut rng = RngStream::new(33, "solver-factorized");
        for _ in 0..200 {
            let p_r = rng.uniform(0.05, 0.95);
            // r independent of z given a: equal conditionals across z.
            let (scenario, _, _) = forward_construct(
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
                [rng.uniform(0.05, 0.45), rng.uniform(0.55, 0.95)],
                [p_r, p_r],
            );
            let solved = solve_with_proxy(&scenario).unwrap();
            let pz1 = scenario.p_z1_given_a;
            for z in 0..2 {
                for r in 0..2 {
                    let pz = if z == 1 { pz1 } else { 1.0 - pz1 };
                    let pr = if r == 1 { p_r } else { 1.0 - p_r };
                    assert!((solved.p[z][r] - pz * pr).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn failed_uniqueness_always_means_solver_error() {
        let mut rng = RngStream::new(34, "uniqueness-pairing");
        for _ in 0..300 {
            let shared = rng.uniform(0.05, 0.95);
            let (scenario, _, _) = forward_construct(
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
                [shared, shared],
                [rng.uniform01(), rng.uniform01()],
            );
            // With p(w|z) identical across z, the proxy carries no
            // information: p(z|a,w) collapses to p(z|a) for both w.
            let check = check_uniqueness(&scenario).unwrap();
            assert!(!check.identifiable);
            assert!(solve_with_proxy(&scenario).is_err());
        }
    }

    #[test]
    fn interval_soundness_inside_and_violation_outside() {
        let mut rng = RngStream::new(35, "interval-soundness");
        for _ in 0..200 {
            let scenario = DiscreteScenario {
                p_z1: rng.uniform01(),
                p_z1_given_a: rng.uniform(0.05, 0.95),
                p_r1_given_a: rng.uniform01(),
                proxy: None,
            };
            let interval = feasible_interval_no_proxy(&scenario).unwrap();
            let (lo, hi) = interval.p11;
            let entries = |p11: f64| {
                let p01 = scenario.p_r1_given_a - p11;
                let p10 = scenario.p_z1_given_a - p11;
                let p00 = 1.0 - p01 - p10 - p11;
                [p00, p01, p10, p11]
            };
            // Inside: every entry is a probability.
            for k in 0..=10 {
                let p11 = lo + (hi - lo) * k as f64 / 10.0;
                assert!(entries(p11).iter().all(|&e| (-1e-12..=1.0 + 1e-12).contains(&e)));
            }
            // Outside (when representable): some entry goes negative.
            if lo > 1e-6 {
                assert!(entries(lo - 1e-7).iter().any(|&e| e < 0.0));
            }
            if hi < 1.0 - 1e-6 {
                assert!(entries(hi + 1e-7).iter().any(|&e| e < 0.0));
            }
        }
    }

    #[test]
    fn proxy_constraints_collapse_interval_to_a_point() {
        let mut rng = RngStream::new(36, "collapse");
        for _ in 0..1000 {
            let (scenario, joint, _) = forward_construct(
                rng.uniform(0.05, 0.95),
                rng.uniform(0.05, 0.95),
                [rng.uniform(0.05, 0.45), rng.uniform(0.55, 0.95)],
                [rng.uniform01(), rng.uniform01()],
            );
            let check = check_uniqueness(&scenario).unwrap();
            assert!(check.identifiable);
            let solved = solve_with_proxy(&scenario).unwrap();
            // The no-proxy interval contains the solved p11; the proxy
            // pins it down exactly.
            let no_proxy = DiscreteScenario {
                proxy: None,
                ..scenario.clone()
            };
            let interval = feasible_interval_no_proxy(&no_proxy).unwrap();
            assert!(solved.p[1][1] >= interval.p11.0 - 1e-9);
            assert!(solved.p[1][1] <= interval.p11.1 + 1e-9);
            assert!((solved.p[1][1] - joint.p[1][1]).abs() < 1e-9);
        }
    }
}
