//! Electrical model of the output stage: a digital potentiometer in series
//! with a protection resistor, in parallel with a bank of switched resistors.
//!
//! In current mode the supply drives the network directly and the output is
//! the total current drawn. In voltage mode the network sits in series with a
//! load resistor `r_c` and the output is the voltage across that load, so the
//! stage behaves as a divider and never exceeds the supply.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::units::{current_through, div_round, voltage_across, Current, Resistance, Voltage};

/// Width of the switch word; one bit per bank slot.
pub const MAX_SLOTS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CircuitError {
    #[error("pot code {code} outside valid interval [{min}, {max}]")]
    CodeOutOfRange { code: u32, min: u32, max: u32 },
    #[error("invalid potentiometer: {0}")]
    InvalidPot(String),
    #[error("invalid resistor bank: {0}")]
    InvalidBank(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Digital potentiometer parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PotentiometerSpec {
    pub n_bits: u32,
    /// End-to-end resistance.
    pub r_max: Resistance,
    /// Wiper resistance, the residual at code 0.
    pub r_wiper: Resistance,
    /// Device current rating.
    pub i_rated: Current,
    /// Accept code `2^n` (257 codes for 8 bits). Physical 8-bit parts stop
    /// at 255; the resistance formula is defined up to `2^n`.
    pub inclusive_top_code: bool,
}

impl PotentiometerSpec {
    pub fn new(
        n_bits: u32,
        r_max: Resistance,
        r_wiper: Resistance,
        i_rated: Current,
    ) -> Result<Self, CircuitError> {
        let spec = PotentiometerSpec {
            n_bits,
            r_max,
            r_wiper,
            i_rated,
            inclusive_top_code: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 8-bit, 10 kΩ part with a 62 Ω wiper and a 20 mA rating.
    pub fn reference() -> Self {
        PotentiometerSpec {
            n_bits: 8,
            r_max: Resistance::from_ohms(10_000),
            r_wiper: Resistance::from_ohms(62),
            i_rated: Current::from_milliamps(20),
            inclusive_top_code: true,
        }
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if !(1..=16).contains(&self.n_bits) {
            return Err(CircuitError::InvalidPot(format!(
                "n_bits must be in [1, 16], got {}",
                self.n_bits
            )));
        }
        if self.r_max <= Resistance::ZERO {
            return Err(CircuitError::InvalidPot("r_max must be positive".into()));
        }
        if self.r_wiper < Resistance::ZERO {
            return Err(CircuitError::InvalidPot("r_wiper must be non-negative".into()));
        }
        Ok(())
    }

    pub fn full_code(&self) -> u32 {
        1 << self.n_bits
    }

    pub fn max_code(&self) -> u32 {
        if self.inclusive_top_code {
            self.full_code()
        } else {
            self.full_code() - 1
        }
    }

    pub fn check_code(&self, code: u32) -> Result<(), CircuitError> {
        if code > self.max_code() {
            return Err(CircuitError::CodeOutOfRange {
                code,
                min: 0,
                max: self.max_code(),
            });
        }
        Ok(())
    }
}

/// One switched branch of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub r_nominal: Resistance,
    pub r_switch_on: Resistance,
}

impl Slot {
    pub fn new(r_nominal: Resistance, r_switch_on: Resistance) -> Self {
        Slot {
            r_nominal,
            r_switch_on,
        }
    }

    /// Series resistance of the branch when its switch is closed.
    pub fn branch_resistance(&self) -> Resistance {
        self.r_nominal + self.r_switch_on
    }
}

/// Ordered switched resistors; slot `b` is driven by switch bit `b`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResistorBank {
    slots: Vec<Slot>,
}

impl ResistorBank {
    pub fn new(slots: Vec<Slot>) -> Result<Self, CircuitError> {
        if slots.len() > MAX_SLOTS {
            return Err(CircuitError::InvalidBank(format!(
                "{} slots exceeds the {MAX_SLOTS}-bit switch word",
                slots.len()
            )));
        }
        for (b, slot) in slots.iter().enumerate() {
            if slot.r_nominal <= Resistance::ZERO {
                return Err(CircuitError::InvalidBank(format!(
                    "slot {b}: nominal resistance must be positive"
                )));
            }
            if slot.r_switch_on < Resistance::ZERO {
                return Err(CircuitError::InvalidBank(format!(
                    "slot {b}: switch resistance must be non-negative"
                )));
            }
        }
        Ok(ResistorBank { slots })
    }

    pub fn empty() -> Self {
        ResistorBank { slots: Vec::new() }
    }

    /// Four 250 Ω slots (bits 0-3) then twelve 50 Ω slots (bits 4-15), each
    /// behind a 1 Ω switch.
    pub fn reference() -> Self {
        let sw = Resistance::from_ohms(1);
        let mut slots = vec![Slot::new(Resistance::from_ohms(250), sw); 4];
        slots.extend(vec![Slot::new(Resistance::from_ohms(50), sw); 12]);
        ResistorBank { slots }
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Mask with every slot bit set.
    pub fn full_mask(&self) -> u16 {
        if self.slots.len() == MAX_SLOTS {
            u16::MAX
        } else {
            ((1u32 << self.slots.len()) - 1) as u16
        }
    }

    /// Indices of the slots connected by `mask`.
    pub fn enabled(&self, mask: u16) -> impl Iterator<Item = usize> + '_ {
        (0..self.slots.len()).filter(move |b| mask & (1 << b) != 0)
    }
}

/// Partition of the bank into the fine group (largest nominal resistance,
/// smallest current step) and the coarse group (everything else), as used by
/// the sweep ladder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankLayout {
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

/// One block of the sweep ladder: the first `coarse_count` coarse slots and
/// the first `fine_count` fine slots are connected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LadderBlock {
    pub coarse_count: usize,
    pub fine_count: usize,
    pub mask: u16,
}

impl BankLayout {
    pub fn from_bank(bank: &ResistorBank) -> Self {
        let Some(largest) = bank.slots().iter().map(|s| s.r_nominal).max() else {
            return BankLayout {
                fine: Vec::new(),
                coarse: Vec::new(),
            };
        };
        let (fine, coarse) = (0..bank.len()).partition(|&b| bank.slots()[b].r_nominal == largest);
        BankLayout { fine, coarse }
    }

    /// Blocks in sweep order: coarse count in the outer loop, fine count in
    /// the inner loop, both starting from zero.
    pub fn ladder(&self) -> Vec<LadderBlock> {
        let mut blocks = Vec::with_capacity((self.coarse.len() + 1) * (self.fine.len() + 1));
        for coarse_count in 0..=self.coarse.len() {
            let coarse_mask = self.coarse[..coarse_count]
                .iter()
                .fold(0u16, |m, &b| m | (1 << b));
            for fine_count in 0..=self.fine.len() {
                let mask = self.fine[..fine_count]
                    .iter()
                    .fold(coarse_mask, |m, &b| m | (1 << b));
                blocks.push(LadderBlock {
                    coarse_count,
                    fine_count,
                    mask,
                });
            }
        }
        blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    CurrentOutput,
    /// The network drives the load resistor `r_c`; the output is its voltage.
    VoltageOutput { r_c: Resistance },
}

impl OutputMode {
    pub fn quantity(&self) -> Quantity {
        match self {
            OutputMode::CurrentOutput => Quantity::Current,
            OutputMode::VoltageOutput { .. } => Quantity::Voltage,
        }
    }
}

/// The physical quantity an output, stimulus or reading refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantity {
    Current,
    Voltage,
}

impl Quantity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quantity::Current => "current",
            Quantity::Voltage => "voltage",
        }
    }

    pub fn parse(text: &str) -> Option<Quantity> {
        match text.trim() {
            "current" => Some(Quantity::Current),
            "voltage" => Some(Quantity::Voltage),
            _ => None,
        }
    }

    /// Engineering unit used in traces and pair files.
    pub fn unit(&self) -> &'static str {
        match self {
            Quantity::Current => "uA",
            Quantity::Voltage => "uV",
        }
    }
}

/// One complete hardware state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitConfig {
    pub pot_code: u32,
    pub switch_mask: u16,
    pub mode: OutputMode,
    pub v_in: Voltage,
    pub r_protect: Resistance,
}

impl CircuitConfig {
    pub fn validate(&self, spec: &PotentiometerSpec, bank: &ResistorBank) -> Result<(), CircuitError> {
        spec.check_code(self.pot_code)?;
        if self.v_in <= Voltage::ZERO {
            return Err(CircuitError::InvalidConfig("v_in must be positive".into()));
        }
        if self.r_protect < Resistance::ZERO {
            return Err(CircuitError::InvalidConfig("r_protect must be non-negative".into()));
        }
        if let OutputMode::VoltageOutput { r_c } = self.mode {
            if r_c <= Resistance::ZERO {
                return Err(CircuitError::InvalidConfig("r_c must be positive".into()));
            }
        }
        if self.switch_mask & !bank.full_mask() != 0 {
            return Err(CircuitError::InvalidConfig(format!(
                "switch mask {:#06x} drives slots beyond the {}-slot bank",
                self.switch_mask,
                bank.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectricalOutput {
    pub current: Current,
    pub voltage: Voltage,
    /// Equivalent resistance of the pot branch in parallel with the enabled
    /// slots (excluding the voltage-mode load).
    pub r_equivalent: Resistance,
    /// The pot branch carries more than the device rating.
    pub overcurrent: bool,
}

impl ElectricalOutput {
    pub fn value(&self, quantity: Quantity) -> i64 {
        match quantity {
            Quantity::Current => self.current.nanoamps(),
            Quantity::Voltage => self.voltage.microvolts(),
        }
    }
}

/// Programmed resistance `R(x) = x / 2^n · R_max + R_w`.
pub fn pot_resistance(spec: &PotentiometerSpec, code: u32) -> Result<Resistance, CircuitError> {
    spec.check_code(code)?;
    let scaled = div_round(
        code as i128 * spec.r_max.micro_ohms() as i128,
        spec.full_code() as i128,
    );
    Ok(Resistance::from_micro_ohms(scaled as i64) + spec.r_wiper)
}

/// Current through the potentiometer branch, `V_in / (R(x) + R_b)`.
pub fn branch_current(
    spec: &PotentiometerSpec,
    r_protect: Resistance,
    code: u32,
    v_in: Voltage,
) -> Result<Current, CircuitError> {
    let r = pot_resistance(spec, code)? + r_protect;
    if r <= Resistance::ZERO {
        return Err(CircuitError::InvalidConfig(
            "pot branch resistance must be positive".into(),
        ));
    }
    Ok(current_through(v_in, r))
}

/// Largest branch current, reached at code 0.
pub fn i_potmax(spec: &PotentiometerSpec, r_protect: Resistance, v_in: Voltage) -> Result<Current, CircuitError> {
    branch_current(spec, r_protect, 0, v_in)
}

/// Code-to-code current step `(R(x) - R(x-1)) / (R(x) · R(x-1)) · V_in`,
/// with both resistances including the protection resistor.
pub fn resolution_at(
    spec: &PotentiometerSpec,
    r_protect: Resistance,
    code: u32,
    v_in: Voltage,
) -> Result<Current, CircuitError> {
    if code == 0 {
        return Err(CircuitError::CodeOutOfRange {
            code,
            min: 1,
            max: spec.max_code(),
        });
    }
    let hi = (pot_resistance(spec, code)? + r_protect).micro_ohms() as i128;
    let lo = (pot_resistance(spec, code - 1)? + r_protect).micro_ohms() as i128;
    if lo <= 0 {
        return Err(CircuitError::InvalidConfig(
            "pot branch resistance must be positive".into(),
        ));
    }
    // ΔR[µΩ] · V[µV] / (R·R')[µΩ²] is in amps; scale to nanoamps.
    let na = div_round((hi - lo) * v_in.microvolts() as i128 * 1_000_000_000, hi * lo);
    Ok(Current::from_nanoamps(na as i64))
}

/// Evaluate the output of one configuration.
pub fn evaluate(
    config: &CircuitConfig,
    spec: &PotentiometerSpec,
    bank: &ResistorBank,
) -> Result<ElectricalOutput, CircuitError> {
    config.validate(spec, bank)?;
    let r_branch = pot_resistance(spec, config.pot_code)? + config.r_protect;
    let i_branch = current_through(config.v_in, r_branch);
    let overcurrent = i_branch > spec.i_rated;

    // Conductances in 1/µΩ, summed in slot order for determinism.
    let mut conductance = 1.0 / r_branch.micro_ohms() as f64;
    for b in bank.enabled(config.switch_mask) {
        conductance += 1.0 / bank.slots()[b].branch_resistance().micro_ohms() as f64;
    }
    let r_equivalent = Resistance::from_micro_ohms((1.0 / conductance).round() as i64);

    let (current, voltage) = match config.mode {
        OutputMode::CurrentOutput => {
            let mut total = i_branch;
            for b in bank.enabled(config.switch_mask) {
                total += current_through(config.v_in, bank.slots()[b].branch_resistance());
            }
            (total, config.v_in)
        }
        OutputMode::VoltageOutput { r_c } => {
            let current = current_through(config.v_in, r_c + r_equivalent);
            (current, voltage_across(current, r_c))
        }
    };

    Ok(ElectricalOutput {
        current,
        voltage,
        r_equivalent,
        overcurrent,
    })
}

/// Complete component set of one board plus its supply and load resistor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Board {
    pub pot: PotentiometerSpec,
    pub bank: ResistorBank,
    /// Series protection resistor on the pot branch.
    pub r_protect: Resistance,
    /// Load resistor switched in for voltage output.
    pub r_c: Resistance,
    pub v_in: Voltage,
}

impl Board {
    /// The reference build: 8-bit 10 kΩ pot, 220 Ω protection, 100 Ω load,
    /// 4 × 250 Ω + 12 × 50 Ω bank, 5 V supply.
    pub fn reference() -> Self {
        Board {
            pot: PotentiometerSpec::reference(),
            bank: ResistorBank::reference(),
            r_protect: Resistance::from_ohms(220),
            r_c: Resistance::from_ohms(100),
            v_in: Voltage::from_volts(5),
        }
    }

    pub fn current_mode(&self) -> OutputMode {
        OutputMode::CurrentOutput
    }

    pub fn voltage_mode(&self) -> OutputMode {
        OutputMode::VoltageOutput { r_c: self.r_c }
    }

    pub fn mode_for(&self, quantity: Quantity) -> OutputMode {
        match quantity {
            Quantity::Current => self.current_mode(),
            Quantity::Voltage => self.voltage_mode(),
        }
    }

    pub fn config(&self, pot_code: u32, switch_mask: u16, mode: OutputMode) -> CircuitConfig {
        CircuitConfig {
            pot_code,
            switch_mask,
            mode,
            v_in: self.v_in,
            r_protect: self.r_protect,
        }
    }

    pub fn output(&self, pot_code: u32, switch_mask: u16, mode: OutputMode) -> Result<ElectricalOutput, CircuitError> {
        evaluate(&self.config(pot_code, switch_mask, mode), &self.pot, &self.bank)
    }

    pub fn layout(&self) -> BankLayout {
        BankLayout::from_bank(&self.bank)
    }
}

/// Which switch masks an enumeration visits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSet {
    /// The masks of the sweep ladder.
    Ladder,
    /// Every subset of the bank.
    All,
    Explicit(Vec<u16>),
}

/// Sorted, de-duplicated outputs over a configuration space.
#[derive(Debug, Clone)]
pub struct OutputRange {
    pub quantity: Quantity,
    /// Distinct outputs ordered by the primary quantity.
    pub outputs: Vec<ElectricalOutput>,
    /// Primary-quantity extremes and spacing, in nA or µV.
    pub min: i64,
    pub max: i64,
    pub finest_step: Option<i64>,
    pub largest_gap: Option<i64>,
}

/// Enumerate every output reachable with the given masks and all pot codes.
///
/// Masks that enable the same multiset of branch resistances give identical
/// outputs, so only one representative per multiset is evaluated.
pub fn enumerate_outputs(
    board: &Board,
    mode: OutputMode,
    v_in: Voltage,
    masks: &MaskSet,
) -> Result<OutputRange, CircuitError> {
    let candidates: Vec<u16> = match masks {
        MaskSet::Ladder => board.layout().ladder().iter().map(|b| b.mask).collect(),
        MaskSet::All => (0..=board.bank.full_mask() as u32).map(|m| m as u16).collect(),
        MaskSet::Explicit(list) => list.clone(),
    };

    let mut classes: BTreeMap<Vec<i64>, u16> = BTreeMap::new();
    for mask in candidates {
        let mut key: Vec<i64> = board
            .bank
            .enabled(mask)
            .map(|b| board.bank.slots()[b].branch_resistance().micro_ohms())
            .collect();
        key.sort_unstable();
        classes.entry(key).or_insert(mask);
    }

    let quantity = mode.quantity();
    let mut outputs = Vec::with_capacity(classes.len() * (board.pot.max_code() as usize + 1));
    for &mask in classes.values() {
        for code in 0..=board.pot.max_code() {
            let cfg = CircuitConfig {
                pot_code: code,
                switch_mask: mask,
                mode,
                v_in,
                r_protect: board.r_protect,
            };
            outputs.push(evaluate(&cfg, &board.pot, &board.bank)?);
        }
    }
    outputs.sort_by_key(|o| o.value(quantity));
    outputs.dedup_by_key(|o| o.value(quantity));

    let values: Vec<i64> = outputs.iter().map(|o| o.value(quantity)).collect();
    let steps = values.windows(2).map(|w| w[1] - w[0]);
    Ok(OutputRange {
        quantity,
        min: values.first().copied().unwrap_or(0),
        max: values.last().copied().unwrap_or(0),
        finest_step: steps.clone().min(),
        largest_gap: steps.max(),
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (PotentiometerSpec, Resistance) {
        (PotentiometerSpec::reference(), Resistance::from_ohms(220))
    }

    #[test]
    fn resistance_at_top_codes_includes_protection() {
        let (spec, r_b) = reference();
        assert_eq!(
            (pot_resistance(&spec, 256).unwrap() + r_b).micro_ohms(),
            10_282_000_000
        );
        assert_eq!(
            (pot_resistance(&spec, 255).unwrap() + r_b).micro_ohms(),
            10_242_937_500
        );
        assert_eq!(pot_resistance(&spec, 0).unwrap(), spec.r_wiper);
    }

    #[test]
    fn out_of_range_code_names_interval() {
        let (spec, _) = reference();
        let err = pot_resistance(&spec, 257).unwrap_err();
        assert_eq!(err.to_string(), "pot code 257 outside valid interval [0, 256]");

        let mut exclusive = spec.clone();
        exclusive.inclusive_top_code = false;
        assert!(pot_resistance(&exclusive, 256).is_err());
        assert!(pot_resistance(&exclusive, 255).is_ok());
    }

    #[test]
    fn branch_current_examples() {
        let (spec, r_b) = reference();
        let v = Voltage::from_volts(5);
        let min = branch_current(&spec, r_b, 256, v).unwrap();
        // 5 V / 10282 Ω
        assert_eq!(min.nanoamps(), 486_287);
        let max = branch_current(&spec, r_b, 0, v).unwrap();
        assert_eq!(max, i_potmax(&spec, r_b, v).unwrap());
        assert_eq!(max.nanoamps(), 17_730_496);
        for code in [0, 17, 256] {
            assert_eq!(branch_current(&spec, r_b, code, Voltage::ZERO).unwrap(), Current::ZERO);
        }
    }

    #[test]
    fn resolution_examples() {
        let (spec, r_b) = reference();
        let v = Voltage::from_volts(5);
        let res = resolution_at(&spec, r_b, 256, v).unwrap();
        // 39.0625 · 5 / (10282 · 10242.9375) A
        assert_eq!(res.nanoamps(), 1_855);
        assert!(resolution_at(&spec, r_b, 1, v).unwrap() > res);
        assert!(resolution_at(&spec, r_b, 0, v).is_err());
    }

    #[test]
    fn resistance_step_is_constant() {
        let (spec, _) = reference();
        for x in 1..=256 {
            let step = pot_resistance(&spec, x).unwrap() - pot_resistance(&spec, x - 1).unwrap();
            assert_eq!(step.micro_ohms(), 39_062_500);
        }
    }

    #[test]
    fn empty_mask_equals_branch_current() {
        let board = Board::reference();
        for code in [0, 100, 256] {
            let out = board.output(code, 0, OutputMode::CurrentOutput).unwrap();
            let i = branch_current(&board.pot, board.r_protect, code, board.v_in).unwrap();
            assert_eq!(out.current, i);
            assert_eq!(out.voltage, board.v_in);
        }
    }

    #[test]
    fn all_switches_on_exceeds_measured_span() {
        let board = Board::reference();
        let out = board.output(0, 0xFFFF, OutputMode::CurrentOutput).unwrap();
        // 4 · 5/251 + 12 · 5/51 + 5/282 A
        let expected = 4.0 * 5.0 / 251.0 + 12.0 * 5.0 / 51.0 + 5.0 / 282.0;
        assert!((out.current.milliamps() / 1e3 - expected).abs() < 1e-8);
        assert!((out.current.milliamps() - 1273.88).abs() < 0.01);
        assert!(out.current > Current::from_milliamps(900));
        assert!(!out.overcurrent);
    }

    #[test]
    fn divider_output_at_top_code() {
        let board = Board::reference();
        let out = board.output(256, 0, board.voltage_mode()).unwrap();
        let expected_uv = 5e6 * 100.0 / (100.0 + 10_282.0);
        assert!((out.voltage.microvolts() as f64 - expected_uv).abs() <= 1.0);
        assert_eq!(out.voltage, voltage_across(out.current, board.r_c));
        assert!(out.voltage < board.v_in);
    }

    #[test]
    fn overcurrent_is_flagged_not_clamped() {
        let mut board = Board::reference();
        board.r_protect = Resistance::ZERO;
        board.pot.i_rated = Current::from_milliamps(20);
        let out = board.output(0, 0, OutputMode::CurrentOutput).unwrap();
        // 5 V / 62 Ω ≈ 80.6 mA
        assert!(out.overcurrent);
        assert_eq!(out.current, current_through(board.v_in, Resistance::from_ohms(62)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let board = Board::reference();
        let mut cfg = board.config(0, 0, OutputMode::CurrentOutput);
        cfg.v_in = Voltage::ZERO;
        assert!(evaluate(&cfg, &board.pot, &board.bank).is_err());

        let cfg = board.config(0, 0, OutputMode::VoltageOutput { r_c: Resistance::ZERO });
        assert!(evaluate(&cfg, &board.pot, &board.bank).is_err());

        let small = ResistorBank::new(vec![Slot::new(Resistance::from_ohms(50), Resistance::ZERO)]).unwrap();
        let cfg = board.config(0, 0b10, OutputMode::CurrentOutput);
        assert!(evaluate(&cfg, &board.pot, &small).is_err());
    }

    #[test]
    fn bank_validation() {
        assert!(ResistorBank::new(vec![Slot::new(Resistance::ZERO, Resistance::ZERO)]).is_err());
        assert!(ResistorBank::new(vec![Slot::new(Resistance::from_ohms(1), Resistance::ZERO); 17]).is_err());
        assert_eq!(ResistorBank::reference().full_mask(), 0xFFFF);
        assert_eq!(ResistorBank::empty().full_mask(), 0);
    }

    #[test]
    fn reference_layout_and_ladder() {
        let layout = Board::reference().layout();
        assert_eq!(layout.fine, vec![0, 1, 2, 3]);
        assert_eq!(layout.coarse, (4..16).collect::<Vec<_>>());
        let ladder = layout.ladder();
        assert_eq!(ladder.len(), 13 * 5);
        assert_eq!(ladder[0].mask, 0);
        assert_eq!(ladder[4].mask, 0x000F);
        // Entering a new coarse block drops the fine slots.
        assert_eq!(ladder[5].mask, 0x0010);
        assert_eq!(ladder.last().unwrap().mask, 0xFFFF);
    }

    #[test]
    fn single_mask_enumeration_is_injective() {
        let board = Board::reference();
        let range = enumerate_outputs(&board, board.current_mode(), board.v_in, &MaskSet::Explicit(vec![0])).unwrap();
        assert_eq!(range.outputs.len(), 257);
    }

    #[test]
    fn ladder_range_matches_reference_span() {
        let board = Board::reference();
        let range = enumerate_outputs(&board, board.current_mode(), board.v_in, &MaskSet::Ladder).unwrap();
        assert_eq!(range.min, 486_287);
        assert!(range.max >= 900_000_000);
        // Finest step is the pot step at the top code; brute force over the
        // enumerated outputs agrees with the closed form to one rounding unit.
        let closed = (1..=256)
            .map(|x| resolution_at(&board.pot, board.r_protect, x, board.v_in).unwrap().nanoamps())
            .min()
            .unwrap();
        assert!((range.finest_step.unwrap() - closed).abs() <= 1);
    }

    #[test]
    fn full_mask_space_collapses_to_multisets() {
        let board = Board::reference();
        let all = enumerate_outputs(&board, board.current_mode(), board.v_in, &MaskSet::All).unwrap();
        let ladder = enumerate_outputs(&board, board.current_mode(), board.v_in, &MaskSet::Ladder).unwrap();
        // Identical resistors mean every subset is equivalent to a ladder block.
        assert_eq!(all.outputs.len(), ladder.outputs.len());
        assert_eq!(all.max, ladder.max);
    }
}
