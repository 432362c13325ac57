//! Benchmark environment builders.
//!
//! Five tabular MDPs: the three-state loop pair, the printer/mail cycle
//! choice, the parallel top/bottom loops, an n-by-n teleporting gridworld and
//! an M/M/1 admission-control queue obtained by uniformisation.

use crate::error::{CoreError, Result};
use crate::mdp::{MdpBuilder, MdpModel, RewardSpec, StationaryPolicy};

/// A built model plus the metadata the harness needs for metrics.
#[derive(Clone, Debug)]
pub struct Environment {
    pub name: String,
    pub model: MdpModel,
    pub start_state: usize,
    /// State whose visits define the steps-to-goal metric (gridworld).
    pub goal_state: Option<usize>,
    /// Per-state queue length for the queue-length metric (admission control).
    pub queue_lengths: Option<Vec<f64>>,
}

/// Three states in a line; the only choice is in the middle state.
/// Going left collects the loop reward immediately, going right one step later.
pub fn three_state() -> Environment {
    let mut b = MdpBuilder::new(3);
    b.edge(0, 0, 1, RewardSpec::constant(0.0));
    b.label_action(0, 0, "right");
    b.edge(1, 0, 0, RewardSpec::constant(2.0));
    b.label_action(1, 0, "left");
    b.edge(1, 1, 2, RewardSpec::constant(0.0));
    b.label_action(1, 1, "right");
    b.edge(2, 0, 1, RewardSpec::constant(2.0));
    b.label_action(2, 0, "left");
    for s in 0..3 {
        b.label_state(s, s.to_string());
    }
    Environment {
        name: "three-state".into(),
        model: b.build().expect("static model"),
        start_state: 1,
        goal_state: None,
        queue_lengths: None,
    }
}

/// Policy ids for [`three_state`]: the left loop and the right loop.
pub const THREE_STATE_LEFT: usize = 0;
pub const THREE_STATE_RIGHT: usize = 1;

/// A 5-cycle paying 5 and a 10-cycle paying 20, sharing the choice state.
///
/// State ids: 0 is the shared state "1"; 1..=4 are printer states "2".."5";
/// 5..=13 are mail states "2'".."10'".
pub fn printer_mail() -> Environment {
    let mut b = MdpBuilder::new(14);
    b.label_state(0, "1");
    b.edge(0, 0, 1, RewardSpec::constant(0.0));
    b.label_action(0, 0, "left");
    b.edge(0, 1, 5, RewardSpec::constant(0.0));
    b.label_action(0, 1, "right");
    // printer loop: 1 -> 2 -> 3 -> 4 -> 5 -> 1, reward 5 on the closing edge
    for i in 1..4 {
        b.edge(i, 0, i + 1, RewardSpec::constant(0.0));
        b.label_state(i, format!("{}", i + 1));
    }
    b.label_state(4, "5");
    b.edge(4, 0, 0, RewardSpec::constant(5.0));
    // mail loop: 1 -> 2' -> ... -> 10' -> 1, reward 20 on the closing edge
    for i in 5..13 {
        b.edge(i, 0, i + 1, RewardSpec::constant(0.0));
        b.label_state(i, format!("{}'", i - 3));
    }
    b.label_state(13, "10'");
    b.edge(13, 0, 0, RewardSpec::constant(20.0));
    Environment {
        name: "printer-mail".into(),
        model: b.build().expect("static model"),
        start_state: 0,
        goal_state: None,
        queue_lengths: None,
    }
}

/// Two 8-step loops with equal total reward 6 but different collection times.
///
/// State ids: S=0, T1..T6=1..6, B1..B6=7..12, E=13.
pub fn parallel_loops() -> Environment {
    let mut b = MdpBuilder::new(14);
    b.label_state(0, "S");
    b.edge(0, 0, 1, RewardSpec::constant(0.0));
    b.label_action(0, 0, "up");
    b.edge(0, 1, 7, RewardSpec::constant(0.0));
    b.label_action(0, 1, "down");
    let top_reward = |i: usize| match i {
        1 => 1.0, // T1 -> T2
        3 => 4.0, // T3 -> T4
        6 => 1.0, // T6 -> E
        _ => 0.0,
    };
    for i in 1..=6 {
        let next = if i == 6 { 13 } else { i + 1 };
        b.edge(i, 0, next, RewardSpec::constant(top_reward(i)));
        b.label_state(i, format!("T{i}"));
    }
    for i in 7..=12 {
        let next = if i == 12 { 13 } else { i + 1 };
        let r = if i == 9 { 6.0 } else { 0.0 }; // B3 -> B4
        b.edge(i, 0, next, RewardSpec::constant(r));
        b.label_state(i, format!("B{}", i - 6));
    }
    b.label_state(13, "E");
    b.edge(13, 0, 0, RewardSpec::constant(0.0));
    Environment {
        name: "parallel-loops".into(),
        model: b.build().expect("static model"),
        start_state: 0,
        goal_state: None,
        queue_lengths: None,
    }
}

pub const LOOP_UP: usize = 0;
pub const LOOP_DOWN: usize = 1;

/// Gridworld action ids for non-goal cells.
pub const GRID_UP: usize = 0;
pub const GRID_RIGHT: usize = 1;
pub const GRID_DOWN: usize = 2;
pub const GRID_LEFT: usize = 3;

/// n-by-n gridworld. The goal cell (0,0) has a single action that teleports
/// uniformly over all cells (goal included) with constant reward 10. Every
/// other cell moves up/right/down/left with reward Unif(0,8); a move that
/// would leave the grid keeps the state and adds a punishment of -1.
/// Non-episodic: there is no terminal state.
pub fn gridworld(n: usize) -> Result<Environment> {
    if n < 2 {
        return Err(CoreError::Config(format!(
            "gridworld needs n >= 2, got {n}"
        )));
    }
    let cells = n * n;
    let id = |row: usize, col: usize| row * n + col;
    let mut b = MdpBuilder::new(cells);
    let teleport: Vec<(f64, usize, RewardSpec)> = (0..cells)
        .map(|s| (1.0 / cells as f64, s, RewardSpec::constant(10.0)))
        .collect();
    b.transition(0, 0, teleport);
    b.label_action(0, 0, "random");
    for row in 0..n {
        for col in 0..n {
            let s = id(row, col);
            b.label_state(s, format!("({row},{col})"));
            if s == 0 {
                continue;
            }
            let moves = [
                (GRID_UP, "up", row.checked_sub(1).map(|r| id(r, col))),
                (
                    GRID_RIGHT,
                    "right",
                    (col + 1 < n).then(|| id(row, col + 1)),
                ),
                (GRID_DOWN, "down", (row + 1 < n).then(|| id(row + 1, col))),
                (GRID_LEFT, "left", col.checked_sub(1).map(|c| id(row, c))),
            ];
            for (a, label, target) in moves {
                match target {
                    Some(next) => b.edge(s, a, next, RewardSpec::uniform(0.0, 8.0)),
                    // clamped at the border: state unchanged, reward shifted by -1
                    None => b.edge(s, a, s, RewardSpec::uniform(-1.0, 7.0)),
                };
                b.label_action(s, a, label);
            }
        }
    }
    Ok(Environment {
        name: format!("gridworld:{n}"),
        model: b.build()?,
        start_state: 0,
        goal_state: Some(0),
        queue_lengths: None,
    })
}

/// Queue action ids.
pub const Q_ACCEPT: usize = 0;
pub const Q_REJECT: usize = 1;
pub const Q_CONTINUE: usize = 2;

/// State id of `(l, arrival?)` in [`mm1_admission`].
pub fn queue_state(l: usize, arrival: bool) -> usize {
    2 * l + usize::from(!arrival)
}

/// Uniformised M/M/1 admission-control queue.
///
/// States are `(l, T)` and `(l, F)` for queue length `l` in `0..=max_len`,
/// where the flag marks a pending arrival. With `p_arr = lambda/(lambda+mu)`
/// and `p_srv = mu/(lambda+mu)`:
///
/// - `(l, T)` accept: queue becomes l+1, then arrival -> `(l+1, T)` w.p.
///   `p_arr`, service -> `(l, F)` w.p. `p_srv` (unavailable at `l = max_len`);
/// - `(l, T)` reject: `(l, T)` w.p. `p_arr`, `(max(l-1,0), F)` w.p. `p_srv`;
/// - `(l, F)` continue: `(l, T)` w.p. `p_arr`, `(max(l-1,0), F)` w.p. `p_srv`.
///
/// Rewards with holding cost `f(l) = c*l`, scaled by `lambda + mu` from the
/// uniformisation: accepting at `(l, T)` pays `[R - f(l+1)](lambda+mu)` (the
/// admitted job raises the held queue to `l+1`); rejecting or continuing
/// keeps the queue at `l` and pays `-f(l)(lambda+mu)`, which is `0` at `l=0`.
pub fn mm1_admission(
    lambda: f64,
    mu: f64,
    reward: f64,
    cost: f64,
    max_len: usize,
) -> Result<Environment> {
    if !(lambda > 0.0) || !(mu > 0.0) {
        return Err(CoreError::Config(format!(
            "mm1 rates must be positive, got lambda={lambda}, mu={mu}"
        )));
    }
    if max_len < 1 {
        return Err(CoreError::Config("mm1 needs max_len >= 1".into()));
    }
    let total = lambda + mu;
    let p_arr = lambda / total;
    let p_srv = mu / total;
    let f = |l: usize| cost * l as f64;
    let mut b = MdpBuilder::new(2 * (max_len + 1));
    for l in 0..=max_len {
        let s_arr = queue_state(l, true);
        let s_no = queue_state(l, false);
        b.label_state(s_arr, format!("({l},T)"));
        b.label_state(s_no, format!("({l},F)"));
        let drain = queue_state(l.saturating_sub(1), false);
        let r_stay = RewardSpec::constant(-f(l) * total);
        if l < max_len {
            let r_acc = RewardSpec::constant((reward - f(l + 1)) * total);
            b.transition(
                s_arr,
                Q_ACCEPT,
                vec![
                    (p_arr, queue_state(l + 1, true), r_acc),
                    (p_srv, queue_state(l, false), r_acc),
                ],
            );
            b.label_action(s_arr, Q_ACCEPT, "accept");
        }
        b.transition(s_arr, Q_REJECT, vec![(p_arr, s_arr, r_stay), (p_srv, drain, r_stay)]);
        b.label_action(s_arr, Q_REJECT, "reject");
        b.transition(s_no, Q_CONTINUE, vec![(p_arr, s_arr, r_stay), (p_srv, drain, r_stay)]);
        b.label_action(s_no, Q_CONTINUE, "continue");
    }
    let queue_lengths = (0..=max_len)
        .flat_map(|l| [l as f64, l as f64])
        .collect();
    Ok(Environment {
        name: format!("mm1:{lambda},{mu},{reward},{cost},{max_len}"),
        model: b.build()?,
        start_state: queue_state(0, true),
        goal_state: None,
        queue_lengths: Some(queue_lengths),
    })
}

/// Control-limit policy family for [`mm1_admission`]: admit iff `l < limit`.
/// Returns `(limit, policy)` for every limit in `0..=max_len`.
pub fn control_limit_policies(env: &Environment) -> Vec<(usize, StationaryPolicy)> {
    let n = env.model.n_states();
    let max_len = n / 2 - 1;
    (0..=max_len)
        .map(|limit| {
            let mut choice = vec![0; n];
            for l in 0..=max_len {
                choice[queue_state(l, true)] = if l < limit && l < max_len {
                    Q_ACCEPT
                } else {
                    Q_REJECT
                };
                choice[queue_state(l, false)] = Q_CONTINUE;
            }
            (limit, StationaryPolicy::new(choice))
        })
        .collect()
}

/// Parse a CLI environment spec: `three-state`, `printer-mail`,
/// `parallel-loops`, `gridworld:N`, `mm1:lambda,mu,R,c,maxlen`.
pub fn parse_env_spec(spec: &str) -> Result<Environment> {
    let bad = |why: &str| CoreError::EnvSpec(spec.to_string(), why.to_string());
    match spec {
        "three-state" => return Ok(three_state()),
        "printer-mail" => return Ok(printer_mail()),
        "parallel-loops" => return Ok(parallel_loops()),
        _ => {}
    }
    if let Some(arg) = spec.strip_prefix("gridworld:") {
        let n: usize = arg
            .parse()
            .map_err(|_| bad("expected gridworld:N with integer N"))?;
        return gridworld(n);
    }
    if let Some(args) = spec.strip_prefix("mm1:") {
        let parts: Vec<&str> = args.split(',').collect();
        if parts.len() != 5 {
            return Err(bad("expected mm1:lambda,mu,R,c,maxlen"));
        }
        let lambda: f64 = parts[0].parse().map_err(|_| bad("bad lambda"))?;
        let mu: f64 = parts[1].parse().map_err(|_| bad("bad mu"))?;
        let r: f64 = parts[2].parse().map_err(|_| bad("bad R"))?;
        let c: f64 = parts[3].parse().map_err(|_| bad("bad c"))?;
        let max_len: usize = parts[4].parse().map_err(|_| bad("bad maxlen"))?;
        return mm1_admission(lambda, mu, r, c, max_len);
    }
    Err(bad(
        "known environments: three-state, printer-mail, parallel-loops, gridworld:N, mm1:lambda,mu,R,c,maxlen",
    ))
}
