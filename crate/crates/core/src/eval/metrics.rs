//! Episode scores and the summary statistics reported by the studies.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Reward scaled down by how much longer the agent took than the expert.
pub fn path_weighted_reward(r: f64, l: usize, l_star: usize) -> f64 {
    debug_assert!(l >= 1 && l_star >= 1);
    r * l_star as f64 / l.max(l_star) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub condition: String,
    pub run: usize,
    pub seed: u64,
    pub reward_total: f64,
    pub success: bool,
    pub steps: usize,
    /// Expert length from the same reset; the episode cap when the expert
    /// itself fails.
    pub expert_steps: usize,
    pub path_weighted: f64,
}

impl EpisodeResult {
    pub const CSV_HEADER: &'static str = "condition,run,seed,reward_total,success,steps,expert_steps,path_weighted";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{},{},{},{:?}",
            self.condition, self.run, self.seed, self.reward_total, self.success as u8, self.steps, self.expert_steps, self.path_weighted
        )
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    mean(&xs.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()).sqrt()
}

/// Aggregate over runs; each run is a block of seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub condition: String,
    pub n_runs: usize,
    pub n_seeds: usize,
    pub mean_reward: f64,
    pub mean_success: f64,
    pub mean_path_weighted: f64,
    /// Standard deviation of the per-run means.
    pub std_reward: f64,
    pub std_success: f64,
    pub run_rewards: Vec<f64>,
    pub run_successes: Vec<f64>,
}

impl RunReport {
    pub fn from_results(condition: &str, results: &[EpisodeResult]) -> Self {
        let n_runs = results.iter().map(|r| r.run + 1).max().unwrap_or(0);
        let mut run_rewards = Vec::with_capacity(n_runs);
        let mut run_successes = Vec::with_capacity(n_runs);
        for run in 0..n_runs {
            let rs: Vec<&EpisodeResult> = results.iter().filter(|r| r.run == run).collect();
            run_rewards.push(mean(&rs.iter().map(|r| r.reward_total).collect::<Vec<_>>()));
            run_successes.push(mean(&rs.iter().map(|r| r.success as u8 as f64).collect::<Vec<_>>()));
        }
        RunReport {
            condition: condition.to_string(),
            n_runs,
            n_seeds: results.len().checked_div(n_runs).unwrap_or(0),
            mean_reward: mean(&results.iter().map(|r| r.reward_total).collect::<Vec<_>>()),
            mean_success: mean(&results.iter().map(|r| r.success as u8 as f64).collect::<Vec<_>>()),
            mean_path_weighted: mean(&results.iter().map(|r| r.path_weighted).collect::<Vec<_>>()),
            std_reward: std_dev(&run_rewards),
            std_success: std_dev(&run_successes),
            run_rewards,
            run_successes,
        }
    }
}

/// Seed-paired mean path-weighted reward difference.
pub fn efficiency_gain(lang: &[EpisodeResult], nolang: &[EpisodeResult]) -> Result<f64, EvalError> {
    if lang.len() != nolang.len() || lang.iter().zip(nolang).any(|(a, b)| a.seed != b.seed) {
        return Err(EvalError::SeedMismatch(format!("{} vs {} results with differing seed lists", lang.len(), nolang.len())));
    }
    let diffs: Vec<f64> = lang.iter().zip(nolang).map(|(a, b)| a.path_weighted - b.path_weighted).collect();
    Ok(mean(&diffs))
}

/// Mean paired difference of total reward.
pub fn paired_reward_gap(a: &[EpisodeResult], b: &[EpisodeResult]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.seed != y.seed) {
        return Err(EvalError::SeedMismatch(format!("{} vs {} results with differing seed lists", a.len(), b.len())));
    }
    Ok(mean(&a.iter().zip(b).map(|(x, y)| x.reward_total - y.reward_total).collect::<Vec<_>>()))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Spearman rank correlation (Pearson on average ranks); 0 when either
/// series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares `c0 + c1·x + c2·x²` through the points.
pub fn polyfit2(x: &[f64], y: &[f64]) -> Result<[f64; 3], EvalError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(EvalError::Config("quadratic fit needs at least three points".into()));
    }
    // Normal equations, solved by Gaussian elimination with partial pivoting.
    let mut s = [0.0; 5];
    let mut t = [0.0; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let mut p = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += p;
            if k < 3 {
                t[k] += p * yi;
            }
            p *= xi;
        }
    }
    let mut a = [[s[0], s[1], s[2], t[0]], [s[1], s[2], s[3], t[1]], [s[2], s[3], s[4], t[2]]];
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows");
        a.swap(col, piv);
        if a[col][col].abs() < 1e-12 {
            return Err(EvalError::Config("quadratic fit is degenerate (need three distinct x values)".into()));
        }
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut c = [0.0; 3];
    for row in (0..3).rev() {
        let rest: f64 = (row + 1..3).map(|k| a[row][k] * c[k]).sum();
        c[row] = (a[row][3] - rest) / a[row][row];
    }
    Ok(c)
}

/// Config ids ordered hardest first: ascending success rate, ties by id.
pub fn difficulty_rank(rates: &[(String, f64)]) -> Vec<String> {
    let mut v: Vec<&(String, f64)> = rates.iter().collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    v.into_iter().map(|(id, _)| id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn res(seed: u64, pw: f64) -> EpisodeResult {
        EpisodeResult {
            condition: "c".into(),
            run: 0,
            seed,
            reward_total: pw,
            success: pw > 0.0,
            steps: 10,
            expert_steps: 10,
            path_weighted: pw,
        }
    }

    #[test]
    fn path_weighted_cases() {
        assert!((path_weighted_reward(1.0, 10, 10) - 1.0).abs() < 1e-12);
        assert!((path_weighted_reward(1.0, 20, 10) - 0.5).abs() < 1e-12);
        assert!((path_weighted_reward(0.5, 8, 10) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn efficiency_gain_is_paired() {
        let a = vec![res(1, 1.0), res(2, 0.5), res(3, 0.25)];
        assert_eq!(efficiency_gain(&a, &a).unwrap(), 0.0);
        assert_eq!(efficiency_gain(&[res(7, 1.0)], &[res(7, 0.0)]).unwrap(), 1.0);
        let b = vec![res(1, 0.5), res(2, 0.5), res(3, 0.0)];
        // (0.5 + 0 + 0.25) / 3
        assert!((efficiency_gain(&a, &b).unwrap() - 0.25).abs() < 1e-12);
        let c = vec![res(1, 0.5), res(9, 0.5), res(3, 0.0)];
        assert!(matches!(efficiency_gain(&a, &c), Err(EvalError::SeedMismatch(_))));
        assert!(efficiency_gain(&a, &b[..2]).is_err());
    }

    #[test]
    fn spearman_cases() {
        let x = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        assert!((spearman(&x, &[1.0, 2.0, 3.0, 5.0, 8.0, 13.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&x, &[1.0; 6]), 0.0);
        // Ties take average ranks: scipy gives 0.9486832980505138 here.
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 2.0, 4.0]) - 0.9486832980505138).abs() < 1e-12);
    }

    #[test]
    fn difficulty_order_and_ties() {
        let rates = vec![("A".to_string(), 0.9), ("B".to_string(), 0.2)];
        assert_eq!(difficulty_rank(&rates), ["B", "A"]);
        let tied = vec![("c".to_string(), 0.5), ("a".to_string(), 0.5), ("b".to_string(), 0.5)];
        assert_eq!(difficulty_rank(&tied), ["a", "b", "c"]);
    }

    #[test]
    fn run_report_is_recomputable() {
        let mut rs = Vec::new();
        for run in 0..2 {
            for s in 0..3 {
                rs.push(EpisodeResult { run, ..res(s, (run * 3 + s as usize) as f64 / 6.0) });
            }
        }
        let r = RunReport::from_results("x", &rs);
        assert_eq!((r.n_runs, r.n_seeds), (2, 3));
        assert!((r.run_rewards[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!((r.run_rewards[1] - 4.0 / 6.0).abs() < 1e-12);
        assert!((r.std_reward - 0.25).abs() < 1e-12);
        assert_eq!(RunReport::from_results("x", &rs), r);
    }

    proptest! {
        #[test]
        fn quadratic_fit_recovers_coefficients(c0 in -3.0f64..3.0, c1 in -3.0f64..3.0, c2 in -3.0f64..3.0) {
            let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.5 - 1.0).collect();
            let y: Vec<f64> = x.iter().map(|v| c0 + c1 * v + c2 * v * v).collect();
            let c = polyfit2(&x, &y).unwrap();
            prop_assert!((c[0] - c0).abs() < 1e-6 && (c[1] - c1).abs() < 1e-6 && (c[2] - c2).abs() < 1e-6);
        }

        #[test]
        fn path_weighted_never_exceeds_reward(r in 0.0f64..1.5, l in 1usize..200, ls in 1usize..200) {
            let p = path_weighted_reward(r, l, ls);
            prop_assert!(p <= r + 1e-15 && p >= 0.0);
        }
    }
}
