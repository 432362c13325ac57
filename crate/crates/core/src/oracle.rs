//! Exact policy evaluation for unichain tabular MDPs.
//!
//! Gain, bias, discounted values and their decomposition into
//! `V_gamma = gain/(1-gamma) + bias + error`, plus fixed points of both
//! learners' update rules and optimality classification by policy
//! enumeration. Linear systems are solved by dense LU; every benchmark
//! model has at most 50 states.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::mdp::{max_over_actions, new_table, MdpModel, SaTable, StationaryPolicy};

/// Tie tolerance for optimality sets; far below the smallest genuine value
/// gap in any benchmark (0.02).
pub const TIE_TOL: f64 = 1e-9;

/// Discount grid used as the numerical surrogate for "all gamma close to 1".
pub const BLACKWELL_GAMMA_GRID: [f64; 3] = [1.0 - 1e-3, 1.0 - 1e-4, 1.0 - 1e-5];

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_MAX_SWEEPS: u64 = 10_000_000;
const DIVERGENCE_BOUND: f64 = 1e12;

/// Decomposition of discounted state values for one policy and discount.
#[derive(Clone, Debug)]
pub struct LaurentDecomposition {
    pub gamma: f64,
    pub gain: f64,
    pub bias: Vec<f64>,
    pub discounted: Vec<f64>,
    pub error: Vec<f64>,
}

/// Optimality classification over a candidate policy set.
#[derive(Clone, Debug)]
pub struct OptimalityReport {
    pub all_policies: usize,
    pub gain_value: f64,
    pub gain_optimal: Vec<StationaryPolicy>,
    pub bias_optimal: Vec<StationaryPolicy>,
    pub blackwell: Vec<StationaryPolicy>,
    pub gain_optimal_indices: Vec<usize>,
    pub bias_optimal_indices: Vec<usize>,
    pub blackwell_indices: Vec<usize>,
    pub gamma_grid: Vec<f64>,
}

fn lu_solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.lu()
        .solve(&b)
        .ok_or_else(|| CoreError::Singular(what.to_string()))
}

/// Closed communicating classes of the chain induced by `pol`.
/// More than one means the policy is multichain.
fn closed_classes(model: &MdpModel, pol: &StationaryPolicy) -> Result<Vec<Vec<usize>>> {
    pol.validate(model)?;
    let n = model.n_states();
    let mut adj = vec![Vec::new(); n];
    for s in 0..n {
        for b in model.branches(s, pol.action(s))? {
            if b.p > 0.0 {
                adj[s].push(b.next);
            }
        }
    }
    // Tarjan strongly connected components, iterative.
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut sccs: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0usize;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call_stack = vec![(root, 0usize)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut child)) = call_stack.last_mut() {
            if *child < adj[v].len() {
                let w = adj[v][*child];
                *child += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call_stack.pop();
                if let Some(&mut (parent, _)) = call_stack.last_mut() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut scc = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        scc.push(w);
                        if w == v {
                            break;
                        }
                    }
                    sccs.push(scc);
                }
            }
        }
    }
    // a class is closed when no edge leaves it
    let mut scc_of = vec![0usize; n];
    for (i, scc) in sccs.iter().enumerate() {
        for &s in scc {
            scc_of[s] = i;
        }
    }
    let mut closed = Vec::new();
    'outer: for (i, scc) in sccs.iter().enumerate() {
        for &s in scc {
            if adj[s].iter().any(|&w| scc_of[w] != i) {
                continue 'outer;
            }
        }
        closed.push(scc.clone());
    }
    Ok(closed)
}

/// Stationary distribution of the unichain induced by `pol`.
/// Transient states receive exactly 0.
pub fn stationary_distribution(model: &MdpModel, pol: &StationaryPolicy) -> Result<Vec<f64>> {
    let closed = closed_classes(model, pol)?;
    if closed.len() != 1 {
        let names: Vec<String> = closed
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                format!("{{{}}}", c.iter().map(|s| model.state_label(*s)).collect::<Vec<_>>().join(","))
            })
            .collect();
        return Err(CoreError::Multichain(format!(
            "{} closed communicating classes: {}",
            closed.len(),
            names.join(" ")
        )));
    }
    let n = model.n_states();
    let p = model.transition_matrix(pol)?;
    // solve pi (P - I) = 0 with the normalisation row sum(pi) = 1
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for c in 0..n {
        a[(n - 1, c)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = lu_solve(a, b, "stationary distribution")?;
    let mut pi: Vec<f64> = pi.iter().copied().collect();
    for x in pi.iter_mut() {
        if x.abs() < 1e-12 {
            *x = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    for x in pi.iter_mut() {
        *x /= total;
    }
    Ok(pi)
}

/// Long-run average reward of a stationary policy; a scalar for unichains.
pub fn gain(model: &MdpModel, pol: &StationaryPolicy) -> Result<f64> {
    let pi = stationary_distribution(model, pol)?;
    let rbar = model.expected_reward_vector(pol)?;
    Ok(pi.iter().zip(&rbar).map(|(p, r)| p * r).sum())
}

/// Bias values: the unique solution of `(I - P) v = rbar - gain` with the
/// stationary-weighted mean of `v` equal to 0. Solved in one system via the
/// rank-one corrected matrix `I - P + 1 pi^T`, which is nonsingular for
/// unichain chains (periodic ones included).
pub fn bias(model: &MdpModel, pol: &StationaryPolicy) -> Result<Vec<f64>> {
    let pi = stationary_distribution(model, pol)?;
    let rho = {
        let rbar = model.expected_reward_vector(pol)?;
        pi.iter().zip(&rbar).map(|(p, r)| p * r).sum::<f64>()
    };
    let n = model.n_states();
    let p = model.transition_matrix(pol)?;
    let mut a = DMatrix::identity(n, n) - p;
    for r in 0..n {
        for c in 0..n {
            a[(r, c)] += pi[c];
        }
    }
    let rbar = model.expected_reward_vector(pol)?;
    let b = DVector::from_iterator(n, rbar.iter().map(|r| r - rho));
    let v = lu_solve(a, b, "bias")?;
    Ok(v.iter().copied().collect())
}

/// Discounted state values: the unique solution of `(I - gamma P) V = rbar`.
pub fn discounted_values(model: &MdpModel, pol: &StationaryPolicy, gamma: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(CoreError::BadDiscount(gamma));
    }
    pol.validate(model)?;
    let n = model.n_states();
    let p = model.transition_matrix(pol)?;
    let a = DMatrix::identity(n, n) - p * gamma;
    let rbar = model.expected_reward_vector(pol)?;
    let b = DVector::from_vec(rbar);
    let v = lu_solve(a, b, "discounted values")?;
    Ok(v.iter().copied().collect())
}

/// Split discounted values into gain part, bias and vanishing error term.
pub fn laurent_decompose(
    model: &MdpModel,
    pol: &StationaryPolicy,
    gamma: f64,
) -> Result<LaurentDecomposition> {
    let gain = gain(model, pol)?;
    let bias = bias(model, pol)?;
    let discounted = discounted_values(model, pol, gamma)?;
    let base = gain / (1.0 - gamma);
    let error = discounted
        .iter()
        .zip(&bias)
        .map(|(d, b)| d - base - b)
        .collect();
    Ok(LaurentDecomposition {
        gamma,
        gain,
        bias,
        discounted,
        error,
    })
}

/// State-action discounted values `r(s,a) + gamma * sum_s' p V(s')` under `pol`.
pub fn state_action_values(
    model: &MdpModel,
    pol: &StationaryPolicy,
    gamma: f64,
) -> Result<SaTable> {
    let v = discounted_values(model, pol, gamma)?;
    let mut table = new_table(model);
    for s in 0..model.n_states() {
        for &a in model.actions(s) {
            let mut q = 0.0;
            for b in model.branches(s, a)? {
                q += b.p * (b.reward.mean() + gamma * v[b.next]);
            }
            table[s][a] = q;
        }
    }
    Ok(table)
}

/// State-action bias `r(s,a) - gain + sum_s' p bias(s')` under `pol`.
pub fn state_action_bias(model: &MdpModel, pol: &StationaryPolicy) -> Result<SaTable> {
    let rho = gain(model, pol)?;
    let v = bias(model, pol)?;
    let mut table = new_table(model);
    for s in 0..model.n_states() {
        for &a in model.actions(s) {
            let mut q = -rho;
            for b in model.branches(s, a)? {
                q += b.p * (b.reward.mean() + v[b.next]);
            }
            table[s][a] = q;
        }
    }
    Ok(table)
}

fn bellman_adjusted(
    model: &MdpModel,
    x: &SaTable,
    gamma: f64,
    rho: f64,
    out: &mut SaTable,
) -> Result<f64> {
    let mut max_change: f64 = 0.0;
    for s in 0..model.n_states() {
        for &a in model.actions(s) {
            let mut v = 0.0;
            for b in model.branches(s, a)? {
                v += b.p * (b.reward.mean() + gamma * max_over_actions(x, model, b.next) - rho);
            }
            max_change = max_change.max((v - x[s][a]).abs());
            out[s][a] = v;
        }
    }
    Ok(max_change)
}

/// Fixed point of the average-adjusted optimality update
/// `X(s,a) = sum p [r + gamma max_a' X(s',a') - rho]`.
///
/// For `gamma = 1` the solution is unique only up to an additive constant;
/// the iteration is damped to handle periodic chains and the returned table
/// is anchored so the stationary-weighted mean over greedy entries is 0,
/// mirroring the bias normalisation.
pub fn adjusted_fixed_point(model: &MdpModel, gamma: f64, rho: f64) -> Result<SaTable> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(CoreError::BadDiscount(gamma));
    }
    let at_one = gamma >= 1.0;
    let mut x = new_table(model);
    let mut next = new_table(model);
    let mut sweeps = 0u64;
    loop {
        let change = bellman_adjusted(model, &x, gamma, rho, &mut next)?;
        if at_one {
            // damped update kills the oscillating modes of periodic chains
            for s in 0..model.n_states() {
                for &a in model.actions(s) {
                    x[s][a] = 0.5 * x[s][a] + 0.5 * next[s][a];
                }
            }
        } else {
            std::mem::swap(&mut x, &mut next);
        }
        sweeps += 1;
        let sup = x
            .iter()
            .flat_map(|row| row.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if sup > DIVERGENCE_BOUND {
            return Err(CoreError::Divergence(format!(
                "adjusted fixed point at gamma={gamma}, rho={rho} exceeded {DIVERGENCE_BOUND:e} \
                 after {sweeps} sweeps (rho is likely not the optimal gain)"
            )));
        }
        if change < FIXED_POINT_TOL {
            break;
        }
        if sweeps >= FIXED_POINT_MAX_SWEEPS {
            return Err(CoreError::Divergence(format!(
                "adjusted fixed point did not converge in {sweeps} sweeps \
                 (last change {change:e})"
            )));
        }
    }
    if at_one {
        // anchor the free constant: stationary-weighted mean over greedy entries = 0
        let greedy = StationaryPolicy::new(
            (0..model.n_states())
                .map(|s| {
                    *model
                        .actions(s)
                        .iter()
                        .max_by(|&&a, &&b| x[s][a].total_cmp(&x[s][b]))
                        .expect("nonempty actions")
                })
                .collect(),
        );
        let pi = stationary_distribution(model, &greedy)?;
        let shift: f64 = (0..model.n_states())
            .map(|s| pi[s] * x[s][greedy.action(s)])
            .sum();
        for s in 0..model.n_states() {
            for &a in model.actions(s) {
                x[s][a] -= shift;
            }
        }
    }
    Ok(x)
}

/// Fixed point of the plain discounted optimality update
/// `Q(s,a) = sum p [r + gamma max_a' Q(s',a')]` by value iteration.
pub fn q_fixed_point(model: &MdpModel, gamma: f64) -> Result<SaTable> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(CoreError::BadDiscount(gamma));
    }
    let mut q = new_table(model);
    let mut next = new_table(model);
    let mut sweeps = 0u64;
    loop {
        let change = bellman_adjusted(model, &q, gamma, 0.0, &mut next)?;
        std::mem::swap(&mut q, &mut next);
        sweeps += 1;
        if change < FIXED_POINT_TOL {
            return Ok(q);
        }
        if sweeps >= FIXED_POINT_MAX_SWEEPS {
            return Err(CoreError::Divergence(format!(
                "value iteration did not converge in {sweeps} sweeps"
            )));
        }
    }
}

/// All deterministic stationary policies in lexicographic order of action
/// indices, provided the product of action-set sizes stays within `cap`.
pub fn enumerate_policies(model: &MdpModel, cap: u64) -> Result<Vec<StationaryPolicy>> {
    let mut count: u128 = 1;
    for s in 0..model.n_states() {
        count = count.saturating_mul(model.actions(s).len() as u128);
        if count > cap as u128 {
            return Err(CoreError::PolicySpaceTooLarge {
                actual: count,
                cap: cap as u128,
            });
        }
    }
    let n = model.n_states();
    let mut cursors = vec![0usize; n];
    let mut out = Vec::with_capacity(count as usize);
    loop {
        out.push(StationaryPolicy::new(
            (0..n).map(|s| model.actions(s)[cursors[s]]).collect(),
        ));
        // odometer increment, last state fastest
        let mut s = n;
        loop {
            if s == 0 {
                return Ok(out);
            }
            s -= 1;
            cursors[s] += 1;
            if cursors[s] < model.actions(s).len() {
                break;
            }
            cursors[s] = 0;
        }
    }
}

/// Keep the candidates whose vector is componentwise within `TIE_TOL` of the
/// componentwise maximum over all candidates.
fn componentwise_argmax(values: &[Vec<f64>], candidates: &[usize]) -> Vec<usize> {
    let n = values[candidates[0]].len();
    let mut best = vec![f64::NEG_INFINITY; n];
    for &c in candidates {
        for s in 0..n {
            best[s] = best[s].max(values[c][s]);
        }
    }
    candidates
        .iter()
        .copied()
        .filter(|&c| (0..n).all(|s| values[c][s] >= best[s] - TIE_TOL))
        .collect()
}

/// Classify a candidate set: gain-optimal, then bias-optimal within those,
/// then discounted-dominant at every grid discount (the Blackwell surrogate).
pub fn blackwell_classify(
    model: &MdpModel,
    policies: &[StationaryPolicy],
) -> Result<OptimalityReport> {
    if policies.is_empty() {
        return Err(CoreError::EmptyInput("no candidate policies".into()));
    }
    let gains: Vec<f64> = policies
        .iter()
        .map(|p| gain(model, p))
        .collect::<Result<_>>()?;
    let best_gain = gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gain_optimal_indices: Vec<usize> = (0..policies.len())
        .filter(|&i| gains[i] >= best_gain - TIE_TOL)
        .collect();

    let mut biases = vec![Vec::new(); policies.len()];
    for &i in &gain_optimal_indices {
        biases[i] = bias(model, &policies[i])?;
    }
    let bias_optimal_indices = componentwise_argmax(&biases, &gain_optimal_indices);

    let mut blackwell_indices = bias_optimal_indices.clone();
    for &g in BLACKWELL_GAMMA_GRID.iter() {
        if blackwell_indices.len() <= 1 {
            break;
        }
        let mut discounted = vec![Vec::new(); policies.len()];
        for &i in &blackwell_indices {
            discounted[i] = discounted_values(model, &policies[i], g)?;
        }
        blackwell_indices = componentwise_argmax(&discounted, &blackwell_indices);
    }

    let pick = |idx: &[usize]| idx.iter().map(|&i| policies[i].clone()).collect();
    Ok(OptimalityReport {
        all_policies: policies.len(),
        gain_value: best_gain,
        gain_optimal: pick(&gain_optimal_indices),
        bias_optimal: pick(&bias_optimal_indices),
        blackwell: pick(&blackwell_indices),
        gain_optimal_indices,
        bias_optimal_indices,
        blackwell_indices,
        gamma_grid: BLACKWELL_GAMMA_GRID.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use crate::mdp::{MdpBuilder, RewardSpec};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    fn pi_a() -> StationaryPolicy {
        StationaryPolicy::new(vec![0, envs::THREE_STATE_LEFT, 0])
    }

    fn pi_b() -> StationaryPolicy {
        StationaryPolicy::new(vec![0, envs::THREE_STATE_RIGHT, 0])
    }

    #[test]
    fn stationary_three_state() {
        let m = envs::three_state().model;
        let pi = stationary_distribution(&m, &pi_a()).unwrap();
        assert!(close(pi[0], 0.5, 1e-12));
        assert!(close(pi[1], 0.5, 1e-12));
        assert_eq!(pi[2], 0.0);
    }

    #[test]
    fn stationary_self_loop() {
        let mut b = MdpBuilder::new(1);
        b.edge(0, 0, 0, RewardSpec::constant(0.0));
        let m = b.build().unwrap();
        let pi = stationary_distribution(&m, &StationaryPolicy::new(vec![0])).unwrap();
        assert_eq!(pi, vec![1.0]);
    }

    #[test]
    fn stationary_printer_mail_mail_loop() {
        let m = envs::printer_mail().model;
        let mut choice = vec![0; 14];
        choice[0] = 1; // mail
        let pi = stationary_distribution(&m, &StationaryPolicy::new(choice)).unwrap();
        assert!(close(pi[0], 0.1, 1e-12));
        for s in 1..5 {
            assert_eq!(pi[s], 0.0, "printer state {s} is transient");
        }
        for s in 5..14 {
            assert!(close(pi[s], 0.1, 1e-12));
        }
    }

    #[test]
    fn multichain_is_detected() {
        let mut b = MdpBuilder::new(2);
        b.edge(0, 0, 0, RewardSpec::constant(0.0));
        b.edge(1, 0, 1, RewardSpec::constant(1.0));
        let m = b.build().unwrap();
        let err = stationary_distribution(&m, &StationaryPolicy::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err, CoreError::Multichain(_)), "{err}");
    }

    #[test]
    fn gain_examples() {
        let m = envs::three_state().model;
        assert!(close(gain(&m, &pi_a()).unwrap(), 1.0, 1e-12));
        assert!(close(gain(&m, &pi_b()).unwrap(), 1.0, 1e-12));

        let pm = envs::printer_mail().model;
        let printer = StationaryPolicy::new(vec![0; 14]);
        let mut mail = vec![0; 14];
        mail[0] = 1;
        let mail = StationaryPolicy::new(mail);
        assert!(close(gain(&pm, &printer).unwrap(), 1.0, 1e-12));
        assert!(close(gain(&pm, &mail).unwrap(), 2.0, 1e-12));

        let pl = envs::parallel_loops().model;
        for a in [envs::LOOP_UP, envs::LOOP_DOWN] {
            let mut choice = vec![0; 14];
            choice[0] = a;
            assert!(close(gain(&pl, &StationaryPolicy::new(choice)).unwrap(), 0.75, 1e-12));
        }
    }

    #[test]
    fn bias_three_state() {
        let m = envs::three_state().model;
        let v = bias(&m, &pi_a()).unwrap();
        assert!(close(v[0], -0.5, 1e-9));
        assert!(close(v[1], 0.5, 1e-9));
        assert!(close(v[2], 1.5, 1e-9));
        // state-action view, off-policy entry (1, right) included
        let q = state_action_bias(&m, &pi_a()).unwrap();
        assert!(close(q[0][0], -0.5, 1e-9));
        assert!(close(q[1][0], 0.5, 1e-9));
        assert!(close(q[1][1], 0.5, 1e-9));
        assert!(close(q[2][0], 1.5, 1e-9));
    }

    #[test]
    fn bias_constant_reward_is_zero() {
        let mut b = MdpBuilder::new(2);
        b.edge(0, 0, 1, RewardSpec::constant(3.0));
        b.edge(1, 0, 0, RewardSpec::constant(3.0));
        let m = b.build().unwrap();
        let v = bias(&m, &StationaryPolicy::new(vec![0, 0])).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-12), "{v:?}");
    }

    #[test]
    fn bias_parallel_loops_state_actions() {
        let m = envs::parallel_loops().model;
        let mut up = vec![0; 14];
        up[0] = envs::LOOP_UP;
        let q = state_action_bias(&m, &StationaryPolicy::new(up)).unwrap();
        assert!(close(q[0][envs::LOOP_UP], 0.25, 1e-9), "{}", q[0][0]);
        let mut down = vec![0; 14];
        down[0] = envs::LOOP_DOWN;
        let q = state_action_bias(&m, &StationaryPolicy::new(down)).unwrap();
        assert!(close(q[0][envs::LOOP_DOWN], 0.375, 1e-9), "{}", q[0][1]);
    }

    #[test]
    fn discounted_three_state_099() {
        let m = envs::three_state().model;
        let v = discounted_values(&m, &pi_a(), 0.99).unwrap();
        assert!(close(v[0], 99.497, 1e-3));
        assert!(close(v[1], 100.502, 1e-3));
        assert!(close(v[2], 101.497, 1e-3));
        let q = state_action_values(&m, &pi_a(), 0.99).unwrap();
        assert!(close(q[1][1], 100.482, 1e-3)); // off-policy (1, right)
    }

    #[test]
    fn discounted_gamma_zero_truncates() {
        let m = envs::printer_mail().model;
        let printer = StationaryPolicy::new(vec![0; 14]);
        let v = discounted_values(&m, &printer, 0.0).unwrap();
        let rbar = m.expected_reward_vector(&printer).unwrap();
        for s in 0..14 {
            assert!(close(v[s], rbar[s], 1e-12));
        }
        assert!(discounted_values(&m, &printer, 1.0).is_err());
    }

    #[test]
    fn discounted_printer_mail_at_threshold() {
        // at gamma = 3^(-1/5) both actions at state 1 are worth the same
        let m = envs::printer_mail().model;
        let gamma = 3f64.powf(-0.2);
        let printer = StationaryPolicy::new(vec![0; 14]);
        let q = state_action_values(&m, &printer, gamma).unwrap();
        assert!(close(q[0][0], 3.113, 2e-3), "{}", q[0][0]);
        assert!(close(q[0][1], 3.113, 2e-3), "{}", q[0][1]);
        assert!((q[0][0] - q[0][1]).abs() < 1e-9);
    }

    /// Enumerated policies that induce a unichain (the only ones for which
    /// gain and bias are defined; gridworld enumeration contains multichain
    /// policies such as two border cells bouncing into each other).
    fn unichain_policies(model: &crate::mdp::MdpModel) -> Vec<StationaryPolicy> {
        enumerate_policies(model, 1 << 20)
            .unwrap()
            .into_iter()
            .filter(|p| stationary_distribution(model, p).is_ok())
            .collect()
    }

    #[test]
    fn laurent_identity_and_error_shrinkage() {
        let envs_all = [
            envs::three_state(),
            envs::printer_mail(),
            envs::parallel_loops(),
            envs::gridworld(2).unwrap(),
            envs::mm1_admission(5.0, 5.0, 12.0, 1.0, 6).unwrap(),
        ];
        for env in &envs_all {
            let pols = unichain_policies(&env.model);
            assert!(!pols.is_empty());
            for pol in &pols {
                let mut last_sup = f64::INFINITY;
                for gamma in [0.9, 0.99, 0.999, 0.9999] {
                    let d = laurent_decompose(&env.model, pol, gamma).unwrap();
                    let base = d.gain / (1.0 - gamma);
                    let mut sup: f64 = 0.0;
                    for s in 0..env.model.n_states() {
                        let residual = d.discounted[s] - base - d.bias[s] - d.error[s];
                        assert!(residual.abs() < 1e-9, "identity violated: {residual}");
                        sup = sup.max(d.error[s].abs());
                    }
                    assert!(
                        sup < last_sup + 1e-12,
                        "{}: error sup grew from {last_sup} to {sup} at gamma {gamma}",
                        env.name
                    );
                    last_sup = sup;
                }
            }
        }
    }

    #[test]
    fn laurent_three_state_example() {
        let m = envs::three_state().model;
        let d = laurent_decompose(&m, &pi_a(), 0.99).unwrap();
        assert!(close(d.gain / (1.0 - 0.99), 100.0, 1e-9));
        assert!(close(d.bias[1], 0.5, 1e-9));
        assert!(close(d.error[1], 0.0025, 1e-3));
    }

    #[test]
    fn laurent_constant_reward_zero_error() {
        let mut b = MdpBuilder::new(2);
        b.edge(0, 0, 1, RewardSpec::constant(3.0));
        b.edge(1, 0, 0, RewardSpec::constant(3.0));
        let m = b.build().unwrap();
        let pol = StationaryPolicy::new(vec![0, 0]);
        for gamma in [0.3, 0.5, 0.9, 0.99] {
            let d = laurent_decompose(&m, &pol, gamma).unwrap();
            assert!(d.error.iter().all(|e| e.abs() < 1e-9), "{:?}", d.error);
        }
    }

    #[test]
    fn laurent_parallel_loops_adjusted_values() {
        let m = envs::parallel_loops().model;
        for (action, expect) in [(envs::LOOP_UP, -0.480392), (envs::LOOP_DOWN, -0.747059)] {
            let mut choice = vec![0; 14];
            choice[0] = action;
            let d = laurent_decompose(&m, &StationaryPolicy::new(choice), 0.5).unwrap();
            let adjusted = d.bias[0] + d.error[0];
            assert!(close(adjusted, expect, 1e-4), "{adjusted} vs {expect}");
        }
    }

    #[test]
    fn adjusted_fixed_point_three_state() {
        let m = envs::three_state().model;
        // exact fixed-point values; the learner-quoted 0.493/0.492 carry noise
        let x = adjusted_fixed_point(&m, 0.999, 1.0).unwrap();
        assert!(close(x[1][0], 0.493, 0.01), "{}", x[1][0]);
        assert!(close(x[1][1], 0.492, 0.01), "{}", x[1][1]);
        assert!(x[1][0] > x[1][1]);

        let x = adjusted_fixed_point(&m, 0.8, 1.0).unwrap();
        assert!(close(x[1][0], 0.555, 0.02), "{}", x[1][0]);
        assert!(close(x[1][1], 0.145, 0.02), "{}", x[1][1]);
    }

    #[test]
    fn adjusted_fixed_point_gamma_zero_is_immediate_reward() {
        let m = envs::printer_mail().model;
        let x = adjusted_fixed_point(&m, 0.0, 0.0).unwrap();
        for s in 0..m.n_states() {
            for &a in m.actions(s) {
                assert!(close(x[s][a], m.expected_reward(s, a).unwrap(), 1e-9));
            }
        }
    }

    #[test]
    fn adjusted_fixed_point_diverges_on_wrong_rho_at_one() {
        let m = envs::printer_mail().model;
        // optimal gain is 2; rho = 1 leaves a positive drift at gamma = 1
        let err = adjusted_fixed_point(&m, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, CoreError::Divergence(_)), "{err}");
    }

    #[test]
    fn adjusted_fixed_point_matches_discounted_identity() {
        // on-policy entries equal discounted - gain/(1-gamma) for the
        // gamma-optimal policy
        for env in [
            envs::three_state(),
            envs::printer_mail(),
            envs::parallel_loops(),
        ] {
            for gamma in [0.5, 0.9, 0.99] {
                let q = q_fixed_point(&env.model, gamma).unwrap();
                let greedy = StationaryPolicy::new(
                    (0..env.model.n_states())
                        .map(|s| {
                            *env.model
                                .actions(s)
                                .iter()
                                .max_by(|&&a, &&b| q[s][a].total_cmp(&q[s][b]))
                                .unwrap()
                        })
                        .collect(),
                );
                let rho = gain(&env.model, &greedy).unwrap();
                let x = adjusted_fixed_point(&env.model, gamma, rho).unwrap();
                let v = discounted_values(&env.model, &greedy, gamma).unwrap();
                for s in 0..env.model.n_states() {
                    let expect = v[s] - rho / (1.0 - gamma);
                    assert!(
                        close(x[s][greedy.action(s)], expect, 1e-8),
                        "{} gamma {gamma} state {s}: {} vs {expect}",
                        env.name,
                        x[s][greedy.action(s)]
                    );
                }
            }
        }
    }

    #[test]
    fn adjusted_fixed_point_at_one_matches_bias() {
        let m = envs::three_state().model;
        let x = adjusted_fixed_point(&m, 1.0, 1.0).unwrap();
        let q = state_action_bias(&m, &pi_a()).unwrap();
        for (s, a) in [(0, 0), (1, 0), (1, 1), (2, 0)] {
            assert!(close(x[s][a], q[s][a], 1e-6), "({s},{a}): {} vs {}", x[s][a], q[s][a]);
        }
    }

    #[test]
    fn q_fixed_point_printer_mail_table() {
        let m = envs::printer_mail().model;
        // quoted values carry the learner's residual error (~6e-3 at 0.99);
        // the exact fixed points are 186.515/191.077
        let cases = [
            (0.99, 186.509, 191.070),
            (0.80, 3.046, 3.011),
            (0.50, 0.323, 0.039),
        ];
        for (gamma, left, right) in cases {
            let q = q_fixed_point(&m, gamma).unwrap();
            assert!(close(q[0][0], left, 0.01), "gamma {gamma} left {}", q[0][0]);
            assert!(close(q[0][1], right, 0.01), "gamma {gamma} right {}", q[0][1]);
        }
        assert!(q_fixed_point(&m, 1.0).is_err());
    }

    #[test]
    fn enumerate_policies_counts() {
        assert_eq!(enumerate_policies(&envs::three_state().model, 100).unwrap().len(), 2);
        assert_eq!(enumerate_policies(&envs::parallel_loops().model, 100).unwrap().len(), 2);
        assert_eq!(enumerate_policies(&envs::gridworld(2).unwrap().model, 100).unwrap().len(), 64);
        let err = enumerate_policies(&envs::gridworld(5).unwrap().model, 1 << 20).unwrap_err();
        assert!(matches!(err, CoreError::PolicySpaceTooLarge { .. }));
    }

    #[test]
    fn enumerate_policies_lexicographic() {
        let m = envs::three_state().model;
        let pols = enumerate_policies(&m, 10).unwrap();
        assert_eq!(pols[0].choice, vec![0, 0, 0]);
        assert_eq!(pols[1].choice, vec![0, 1, 0]);
    }

    #[test]
    fn classify_three_state() {
        let m = envs::three_state().model;
        let pols = enumerate_policies(&m, 10).unwrap();
        let report = blackwell_classify(&m, &pols).unwrap();
        assert_eq!(report.gain_optimal_indices, vec![0, 1]);
        assert_eq!(report.bias_optimal_indices, vec![0]);
        assert_eq!(report.blackwell_indices, vec![0]);
        assert_eq!(report.blackwell[0].choice[1], envs::THREE_STATE_LEFT);
    }

    #[test]
    fn classify_printer_mail() {
        let m = envs::printer_mail().model;
        let pols = enumerate_policies(&m, 10).unwrap();
        let report = blackwell_classify(&m, &pols).unwrap();
        assert!(close(report.gain_value, 2.0, 1e-12));
        assert_eq!(report.gain_optimal.len(), 1);
        assert_eq!(report.blackwell.len(), 1);
        assert_eq!(report.blackwell[0].choice[0], 1, "mail loop wins");
    }

    #[test]
    fn classify_parallel_loops() {
        let m = envs::parallel_loops().model;
        let pols = enumerate_policies(&m, 10).unwrap();
        let report = blackwell_classify(&m, &pols).unwrap();
        assert_eq!(report.gain_optimal.len(), 2);
        assert_eq!(report.bias_optimal.len(), 1);
        assert_eq!(report.bias_optimal[0].choice[0], envs::LOOP_DOWN);
        assert_eq!(report.blackwell[0].choice[0], envs::LOOP_DOWN);
    }

    #[test]
    fn classify_rejects_empty() {
        let m = envs::three_state().model;
        assert!(blackwell_classify(&m, &[]).is_err());
    }

    #[test]
    fn nesting_holds_on_all_enumerable_environments() {
        for env in [
            envs::three_state(),
            envs::printer_mail(),
            envs::parallel_loops(),
            envs::gridworld(2).unwrap(),
        ] {
            let pols = unichain_policies(&env.model);
            let report = blackwell_classify(&env.model, &pols).unwrap();
            assert!(!report.gain_optimal.is_empty());
            let within = |sub: &[usize], sup: &[usize]| sub.iter().all(|i| sup.contains(i));
            assert!(within(&report.bias_optimal_indices, &report.gain_optimal_indices));
            assert!(within(&report.blackwell_indices, &report.bias_optimal_indices));
        }
    }

    #[test]
    fn printer_mail_discount_threshold() {
        // discounted argmax at state 1 flips exactly at 3^(-1/5)
        let m = envs::printer_mail().model;
        let printer = StationaryPolicy::new(vec![0; 14]);
        let mut switch = None;
        let mut gamma = 0.79;
        while gamma < 0.81 {
            let q = state_action_values(&m, &printer, gamma).unwrap();
            if q[0][1] > q[0][0] {
                switch = Some(gamma);
                break;
            }
            gamma += 1e-4;
        }
        let switch = switch.expect("threshold in range");
        assert!(close(switch, 3f64.powf(-0.2), 1.5e-4), "{switch}");
    }
}
