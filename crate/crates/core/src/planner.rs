//! Range planning: Fibonacci-structured stage currents, the Fibonacci sum
//! identity, and inverse design of a resistor bank for a target maximum.

use std::cmp::Ordering;

use thiserror::Error;

use crate::circuit::{branch_current, i_potmax, Board, CircuitError, ResistorBank, Slot, MAX_SLOTS};
use crate::units::{current_through, Current, Resistance, Voltage};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("a stage plan needs at least 2 stages, got {0}")]
    TooFewStages(usize),
    #[error("invalid stage parameter: {0}")]
    InvalidStage(String),
    #[error("target {target} unreachable with {MAX_SLOTS} slots; at most {max_achievable} achievable")]
    Infeasible {
        target: Current,
        max_achievable: Current,
    },
    #[error("invalid design input: {0}")]
    InvalidDesign(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// Stage currents `I_1..I_n` and their integer multiples of `I_1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    pub stage_currents: Vec<Current>,
    pub multipliers: Vec<u64>,
}

impl StagePlan {
    /// Every stage from the third on is the sum of the previous two.
    pub fn satisfies_recurrence(&self) -> bool {
        self.stage_currents
            .windows(3)
            .all(|w| w[2] == w[0] + w[1])
    }

    /// Every stage is an integer multiple of the first.
    pub fn is_integral(&self) -> bool {
        let base = self.stage_currents[0].nanoamps();
        self.stage_currents
            .iter()
            .zip(&self.multipliers)
            .all(|(i, &k)| k >= 1 && i.nanoamps() == base * k as i64)
    }
}

/// `I_1 = i_base`, `I_2 = k2 · i_base`, `I_j = I_{j-1} + I_{j-2}`.
pub fn fibonacci_stages(i_base: Current, n_stages: usize, k2: u64) -> Result<StagePlan, PlanError> {
    if n_stages < 2 {
        return Err(PlanError::TooFewStages(n_stages));
    }
    if i_base <= Current::ZERO {
        return Err(PlanError::InvalidStage("base current must be positive".into()));
    }
    if k2 == 0 {
        return Err(PlanError::InvalidStage("k2 must be at least 1".into()));
    }
    let mut multipliers = vec![1u64, k2];
    while multipliers.len() < n_stages {
        let n = multipliers.len();
        let next = multipliers[n - 1]
            .checked_add(multipliers[n - 2])
            .ok_or_else(|| PlanError::InvalidStage("stage multiplier overflow".into()))?;
        multipliers.push(next);
    }
    let stage_currents = multipliers
        .iter()
        .map(|&k| {
            i64::try_from(k)
                .ok()
                .and_then(|k| i_base.nanoamps().checked_mul(k))
                .map(Current::from_nanoamps)
                .ok_or_else(|| PlanError::InvalidStage("stage current overflow".into()))
        })
        .collect::<Result<_, _>>()?;
    Ok(StagePlan {
        stage_currents,
        multipliers,
    })
}

/// `F_n` of the canonical sequence (`F_1 = F_2 = 1`) by fast doubling.
fn fibonacci(n: u32) -> u128 {
    // Returns (F_k, F_{k+1}).
    fn pair(k: u32) -> (u128, u128) {
        if k == 0 {
            return (0, 1);
        }
        let (a, b) = pair(k / 2);
        let c = a * (2 * b - a);
        let d = a * a + b * b;
        if k.is_multiple_of(2) {
            (c, d)
        } else {
            (d, c + d)
        }
    }
    pair(n).0
}

/// Both sides of `Σ_{j=1..n} F_j = F_{n+2} - 1`: the left by summing the
/// sequence term by term, the right from an independently computed
/// `F_{n+2}`. Defined for `2 ≤ n ≤ 180`.
pub fn fib_sum_check(n: u32) -> (u128, u128) {
    assert!((2..=180).contains(&n), "n must be in [2, 180]");
    let (mut prev, mut cur) = (0u128, 1u128);
    let mut sum = 0u128;
    for _ in 0..n {
        sum += cur;
        (prev, cur) = (cur, prev + cur);
    }
    (sum, fibonacci(n + 2) - 1)
}

/// Fixed context for bank design: the pot branch and switch hardware.
#[derive(Debug, Clone)]
pub struct DesignContext {
    pub board: Board,
    /// On-resistance assumed for every new slot.
    pub r_switch: Resistance,
    /// Slots are allocated in whole switch packages of this size.
    pub group_size: usize,
}

impl DesignContext {
    pub fn new(board: Board) -> Self {
        DesignContext {
            board,
            r_switch: Resistance::from_ohms(1),
            group_size: 1,
        }
    }

    pub fn with_group_size(mut self, group_size: usize) -> Self {
        self.group_size = group_size;
        self
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    counts: Vec<usize>,
    largest_gap: i64,
    slots: usize,
    sorted_resistances: Vec<Resistance>,
}

impl Candidate {
    fn rank(&self, other: &Candidate) -> Ordering {
        self.largest_gap
            .cmp(&other.largest_gap)
            .then(self.slots.cmp(&other.slots))
            .then_with(|| self.sorted_resistances.cmp(&other.sorted_resistances))
    }
}

/// Choose slot counts from `slot_values` so the current-mode maximum reaches
/// `target_max`, minimising the largest gap between adjacent outputs.
///
/// Every count vector with at most [`MAX_SLOTS`] slots (in multiples of the
/// context's group size) is tried. Ties go to fewer slots, then to the
/// lexicographically smaller sorted resistance list. The returned bank lists
/// the largest resistance first.
pub fn design_bank(
    target_max: Current,
    v_in: Voltage,
    slot_values: &[Resistance],
    ctx: &DesignContext,
) -> Result<ResistorBank, PlanError> {
    if v_in <= Voltage::ZERO {
        return Err(PlanError::InvalidDesign("supply must be positive".into()));
    }
    if ctx.group_size == 0 || ctx.group_size > MAX_SLOTS {
        return Err(PlanError::InvalidDesign(format!(
            "group size must be in [1, {MAX_SLOTS}]"
        )));
    }
    let mut values: Vec<Resistance> = slot_values.to_vec();
    values.sort_unstable_by(|a, b| b.cmp(a));
    values.dedup();
    if values.iter().any(|&r| r <= Resistance::ZERO) {
        return Err(PlanError::InvalidDesign("slot resistances must be positive".into()));
    }

    let board = &ctx.board;
    let pot_max = i_potmax(&board.pot, board.r_protect, v_in)?;
    if target_max <= pot_max {
        return Ok(ResistorBank::empty());
    }
    if values.is_empty() {
        return Err(PlanError::Infeasible {
            target: target_max,
            max_achievable: pot_max,
        });
    }

    let slot_current = |r: Resistance| current_through(v_in, r + ctx.r_switch);
    let groups = MAX_SLOTS / ctx.group_size;
    // Current-mode output is the branch current plus each enabled slot's
    // current, so candidates are scored from these parts alone.
    let pot_currents: Vec<i64> = (0..=board.pot.max_code())
        .map(|code| branch_current(&board.pot, board.r_protect, code, v_in).map(|i| i.nanoamps()))
        .collect::<Result<_, _>>()?;
    let slot_currents: Vec<i64> = values.iter().map(|&r| slot_current(r).nanoamps()).collect();
    let mut best: Option<Candidate> = None;
    let mut counts = vec![0usize; values.len()];
    loop {
        let total: usize = counts.iter().sum::<usize>() * ctx.group_size;
        let max_current = counts
            .iter()
            .zip(&values)
            .fold(pot_max, |acc, (&c, &r)| {
                acc + Current::from_nanoamps(slot_current(r).nanoamps() * (c * ctx.group_size) as i64)
            });
        if total > 0 && max_current >= target_max {
            let sizes: Vec<usize> = counts.iter().map(|&c| c * ctx.group_size).collect();
            let largest_gap = ladder_gap(&pot_currents, &slot_currents, &sizes);
            let mut sorted_resistances: Vec<Resistance> = values
                .iter()
                .zip(&sizes)
                .flat_map(|(&r, &n)| std::iter::repeat_n(r, n))
                .collect();
            sorted_resistances.sort_unstable();
            let candidate = Candidate {
                counts: counts.clone(),
                largest_gap,
                slots: total,
                sorted_resistances,
            };
            if best.as_ref().is_none_or(|b| candidate.rank(b) == Ordering::Less) {
                best = Some(candidate);
            }
        }
        if !next_composition(&mut counts, groups) {
            break;
        }
    }

    match best {
        Some(c) => Ok(build_bank(&values, &c.counts, ctx)),
        None => {
            let smallest = *values.last().expect("non-empty");
            let per_slot = slot_current(smallest).nanoamps();
            let max_achievable = pot_max
                + Current::from_nanoamps(per_slot * (groups * ctx.group_size) as i64);
            Err(PlanError::Infeasible {
                target: target_max,
                max_achievable,
            })
        }
    }
}

fn build_bank(values: &[Resistance], counts: &[usize], ctx: &DesignContext) -> ResistorBank {
    let slots = values
        .iter()
        .zip(counts)
        .flat_map(|(&r, &c)| std::iter::repeat_n(Slot::new(r, ctx.r_switch), c * ctx.group_size))
        .collect();
    ResistorBank::new(slots).expect("counts bounded by the switch word")
}

/// Largest gap between adjacent distinct outputs when any number (up to
/// `sizes[v]`) of the slots carrying `slot_currents[v]` is enabled.
fn ladder_gap(pot_currents: &[i64], slot_currents: &[i64], sizes: &[usize]) -> i64 {
    let mut sums = vec![0i64];
    for (&i, &n) in slot_currents.iter().zip(sizes) {
        sums = sums
            .iter()
            .flat_map(|&s| (0..=n as i64).map(move |k| s + k * i))
            .collect();
    }
    let mut outputs: Vec<i64> = sums
        .iter()
        .flat_map(|&s| pot_currents.iter().map(move |&p| s + p))
        .collect();
    outputs.sort_unstable();
    outputs.dedup();
    outputs.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
}

/// Advance `counts` to the next vector with `Σ counts ≤ limit`, odometer
/// style. Returns false after the last one.
fn next_composition(counts: &mut [usize], limit: usize) -> bool {
    for i in 0..counts.len() {
        counts[i] += 1;
        if counts.iter().sum::<usize>() <= limit {
            return true;
        }
        counts[i] = 0;
    }
    false
}
