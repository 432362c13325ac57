//! Rank-based significance pipeline: Friedman omnibus test, pairwise
//! Conover-Iman post-hoc comparisons, Benjamini-Hochberg FDR adjustment and
//! grouping of statistically indistinguishable algorithms.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{CoreError, Result};

/// Replications-by-algorithms matrix of a single metric.
#[derive(Clone, Debug)]
pub struct MetricMatrix {
    values: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl MetricMatrix {
    /// `values[replication][algorithm]`; needs at least 2 rows and 2 columns
    /// and no missing cells.
    pub fn new(values: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(CoreError::Config(
                "metric matrix needs at least 2 replications".into(),
            ));
        }
        let k = labels.len();
        if k < 2 {
            return Err(CoreError::Config(
                "metric matrix needs at least 2 algorithms".into(),
            ));
        }
        for row in &values {
            if row.len() != k {
                return Err(CoreError::Config(format!(
                    "row with {} cells, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(CoreError::Config("metric matrix has missing cells".into()));
            }
        }
        Ok(Self { values, labels })
    }

    pub fn n_replications(&self) -> usize {
        self.values.len()
    }

    pub fn n_algorithms(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Within-row ranks, average ranks on ties.
    fn ranks(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|row| {
                let k = row.len();
                let mut order: Vec<usize> = (0..k).collect();
                order.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
                let mut ranks = vec![0.0; k];
                let mut i = 0;
                while i < k {
                    let mut j = i;
                    while j + 1 < k && row[order[j + 1]] == row[order[i]] {
                        j += 1;
                    }
                    // ranks i+1 ..= j+1 averaged over the tied run
                    let avg = (i + j + 2) as f64 / 2.0;
                    for &col in &order[i..=j] {
                        ranks[col] = avg;
                    }
                    i = j + 1;
                }
                ranks
            })
            .collect()
    }

    fn rank_sums(&self, ranks: &[Vec<f64>]) -> Vec<f64> {
        let k = self.n_algorithms();
        let mut sums = vec![0.0; k];
        for row in ranks {
            for (j, r) in row.iter().enumerate() {
                sums[j] += r;
            }
        }
        sums
    }

    /// Friedman chi-square statistic with k-1 degrees of freedom and its
    /// p-value. Fully tied data yields statistic 0 and p = 1.
    pub fn friedman(&self) -> (f64, f64) {
        let n = self.n_replications() as f64;
        let k = self.n_algorithms() as f64;
        let ranks = self.ranks();
        let sums = self.rank_sums(&ranks);
        let stat =
            12.0 / (n * k * (k + 1.0)) * sums.iter().map(|r| r * r).sum::<f64>() - 3.0 * n * (k + 1.0);
        let stat = stat.max(0.0);
        let chi = ChiSquared::new(k - 1.0).expect("df >= 1");
        (stat, chi.sf(stat))
    }

    /// Conover-Iman pairwise comparisons aligned with the Friedman ranks:
    /// t statistics on rank-sum differences with the pooled rank variance and
    /// (n-1)(k-1) degrees of freedom. Returns the symmetric matrix of raw
    /// p-values (diagonal 1).
    pub fn conover_pairwise(&self) -> Vec<Vec<f64>> {
        let n = self.n_replications() as f64;
        let k = self.n_algorithms() as f64;
        let kk = self.n_algorithms();
        let ranks = self.ranks();
        let sums = self.rank_sums(&ranks);
        let a1: f64 = ranks.iter().flatten().map(|r| r * r).sum();
        let c1 = n * k * (k + 1.0) * (k + 1.0) / 4.0;
        let mut out = vec![vec![1.0; kk]; kk];
        if (a1 - c1).abs() < 1e-12 {
            // every row fully tied: nothing distinguishes the columns
            return out;
        }
        let t1 = (k - 1.0)
            * sums
                .iter()
                .map(|r| (r - n * (k + 1.0) / 2.0).powi(2))
                .sum::<f64>()
            / (a1 - c1);
        let df = (n - 1.0) * (k - 1.0);
        let variance = (2.0 * n * (a1 - c1) / df) * (1.0 - t1 / (n * (k - 1.0)));
        let denom = variance.max(0.0).sqrt();
        let t_dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        for i in 0..kk {
            for j in (i + 1)..kk {
                let diff = (sums[i] - sums[j]).abs();
                let p = if denom == 0.0 {
                    // perfectly separated ranks: zero pooled variance
                    if diff < 1e-12 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (2.0 * t_dist.sf(diff / denom)).min(1.0)
                };
                out[i][j] = p;
                out[j][i] = p;
            }
        }
        out
    }
}

/// Benjamini-Hochberg step-up adjustment: sorted ascending,
/// `adj_i = min_{j >= i} (m * p_j / j)`, clipped to 1, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Result<Vec<f64>> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(CoreError::Config(
            "p-values must lie in [0, 1] for FDR adjustment".into(),
        ));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        running = running.min(p[idx] * m as f64 / (rank + 1) as f64);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

/// Apply Benjamini-Hochberg across the upper triangle of a symmetric
/// p-value matrix, mirroring the result.
pub fn adjust_pairwise_bh(raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let k = raw.len();
    let mut flat = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            flat.push(raw[i][j]);
        }
    }
    let adj = benjamini_hochberg(&flat)?;
    let mut out = vec![vec![1.0; k]; k];
    let mut cursor = 0;
    for i in 0..k {
        for j in (i + 1)..k {
            out[i][j] = adj[cursor];
            out[j][i] = adj[cursor];
            cursor += 1;
        }
    }
    Ok(out)
}

/// Maximal cliques of the indistinguishability graph (edge when the adjusted
/// p-value exceeds `alpha`), sorted by size descending then lexicographically.
/// An algorithm can appear in several groups.
pub fn indistinguishable_groups(adjusted: &[Vec<f64>], alpha: f64) -> Vec<Vec<usize>> {
    let k = adjusted.len();
    let edge = |i: usize, j: usize| i == j || adjusted[i][j] > alpha;
    // Bron-Kerbosch without pivoting; k is the number of algorithms (tiny)
    let mut cliques: Vec<Vec<usize>> = Vec::new();
    fn extend(
        r: &mut Vec<usize>,
        p: Vec<usize>,
        x: Vec<usize>,
        edge: &dyn Fn(usize, usize) -> bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if p.is_empty() && x.is_empty() {
            out.push(r.clone());
            return;
        }
        let mut p = p;
        let mut x = x;
        while let Some(v) = p.first().copied() {
            let np: Vec<usize> = p.iter().copied().filter(|&u| u != v && edge(u, v)).collect();
            let nx: Vec<usize> = x.iter().copied().filter(|&u| edge(u, v)).collect();
            r.push(v);
            extend(r, np, nx, edge, out);
            r.pop();
            p.retain(|&u| u != v);
            x.push(v);
        }
    }
    extend(
        &mut Vec::new(),
        (0..k).collect(),
        Vec::new(),
        &edge,
        &mut cliques,
    );
    for c in cliques.iter_mut() {
        c.sort_unstable();
    }
    cliques.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    cliques
}
