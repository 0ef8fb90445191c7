//! Network element types for unbalanced radial feeders.
//!
//! A [`PhasedNetwork`] is an immutable snapshot: elements are added through
//! [`NetworkBuilder`], sorted by id, and shared behind an [`Arc`] so that
//! candidate networks with different DG capacities are cheap to clone.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

pub const DEFAULT_V_MIN_PU: f64 = 0.94;
pub const DEFAULT_V_MAX_PU: f64 = 1.06;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    fn bit(self) -> u8 {
        match self {
            Phase::A => 1,
            Phase::B => 2,
            Phase::C => 4,
        }
    }
}

/// Subset of the three phases, always iterated in a, b, c order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const EMPTY: PhaseSet = PhaseSet(0);
    pub const ABC: PhaseSet = PhaseSet(7);

    pub fn single(phase: Phase) -> Self {
        PhaseSet(phase.bit())
    }

    pub fn from_phases<I: IntoIterator<Item = Phase>>(phases: I) -> Self {
        phases.into_iter().fold(PhaseSet::EMPTY, PhaseSet::with)
    }

    #[must_use]
    pub fn with(self, phase: Phase) -> Self {
        PhaseSet(self.0 | phase.bit())
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & phase.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `phase` within this set's canonical ordering, if present.
    pub fn index_of(self, phase: Phase) -> Option<usize> {
        if !self.contains(phase) {
            return None;
        }
        Some(self.iter().take_while(|p| *p != phase).count())
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for phase in self.iter() {
            write!(f, "{}", phase.letter())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

/// Small square complex matrix stored row-major; used for per-phase series
/// impedance blocks.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn new(dim: usize, data: Vec<Complex64>) -> Result<Self, String> {
        if dim == 0 {
            return Err("matrix dimension must be at least 1".into());
        }
        if data.len() != dim * dim {
            return Err(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            ));
        }
        Ok(ComplexMatrix { dim, data })
    }

    pub fn diagonal(dim: usize, value: Complex64) -> Self {
        let mut data = vec![Complex64::ZERO; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = value;
        }
        ComplexMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_symmetric(&self, relative_tol: f64) -> bool {
        let scale = self
            .data
            .iter()
            .map(|z| z.norm())
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        for r in 0..self.dim {
            for c in (r + 1)..self.dim {
                if (self.get(r, c) - self.get(c, r)).norm() > relative_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    /// Gauss-Jordan inverse with partial pivoting; `None` when singular.
    pub fn inverse(&self) -> Option<ComplexMatrix> {
        let n = self.dim;
        let mut a = self.data.clone();
        let mut inv = ComplexMatrix::diagonal(n, Complex64::ONE).data;
        let scale = a.iter().map(|z| z.norm()).fold(0.0_f64, f64::max);
        if scale == 0.0 {
            return None;
        }
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&r1, &r2| {
                    a[r1 * n + col]
                        .norm()
                        .total_cmp(&a[r2 * n + col].norm())
                })
                .unwrap();
            if a[pivot_row * n + col].norm() <= 1e-14 * scale {
                return None;
            }
            if pivot_row != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot_row * n + k);
                    inv.swap(col * n + k, pivot_row * n + k);
                }
            }
            let pivot = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= pivot;
                inv[col * n + k] /= pivot;
            }
            for row in 0..n {
                if row == col {
                    continue;
                }
                let factor = a[row * n + col];
                if factor == Complex64::ZERO {
                    continue;
                }
                for k in 0..n {
                    let sub_a = a[col * n + k];
                    let sub_i = inv[col * n + k];
                    a[row * n + k] -= factor * sub_a;
                    inv[row * n + k] -= factor * sub_i;
                }
            }
        }
        Some(ComplexMatrix { dim: n, data: inv })
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix[")?;
        for r in 0..self.dim {
            if r > 0 {
                write!(f, " | ")?;
            }
            for c in 0..self.dim {
                if c > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{}", self.get(r, c))?;
            }
        }
        write!(f, "]")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Nominal line-to-neutral magnitude in volts; the per-unit base.
    pub nominal_voltage: f64,
    pub is_source: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSegment {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub phases: PhaseSet,
    /// Series impedance in ohms over this segment's phases, row-major.
    pub z_matrix: ComplexMatrix,
    /// Per-phase current rating in amps.
    pub ampacity: f64,
    /// Conductor length in meters, when known; used only for reporting.
    pub length_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub id: String,
    pub from_bus: String,
    pub to_bus: String,
    pub phases: PhaseSet,
    pub rating_kva: f64,
    /// Series impedance on the transformer's own base.
    pub series_impedance_pu: Complex64,
    /// Off-nominal turns ratio multiplier on the from side.
    pub tap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    Wye,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadModel {
    /// Constant complex power regardless of voltage.
    ConstantPq,
    /// Constant admittance fixed from nominal voltage.
    ConstantZ,
    /// Constant current magnitude at the nominal power factor angle.
    ConstantI,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    pub connection: Connection,
    pub model: LoadModel,
    /// One entry per phase in canonical order; for delta connections the
    /// k-th entry sits between the k-th and (k+1 mod n)-th phases of the set.
    pub per_phase_kw: Vec<f64>,
    pub per_phase_kvar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacitorBank {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    /// Rated reactive injection per phase at nominal voltage.
    pub per_phase_kvar: Vec<f64>,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Regulator {
    pub id: String,
    /// Line segment this regulator rides on.
    pub on_segment: String,
    /// Voltage boost per phase of that segment, canonical order.
    pub per_phase_tap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DGUnit {
    pub id: String,
    pub bus: String,
    pub phases: PhaseSet,
    pub p_min_kw: f64,
    pub p_max_kw: f64,
    /// Installed active power, split equally across the unit's phases and
    /// delivered at unity power factor.
    pub capacity_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct NetworkBody {
    buses: Vec<Bus>,
    segments: Vec<LineSegment>,
    transformers: Vec<Transformer>,
    loads: Vec<Load>,
    capacitors: Vec<CapacitorBank>,
    regulators: Vec<Regulator>,
}

/// Immutable feeder snapshot. Everything except the DG capacities lives
/// behind a shared pointer, so [`PhasedNetwork::with_dg_capacities`] costs one
/// small vector clone per candidate.
#[derive(Debug, Clone)]
pub struct PhasedNetwork {
    body: Arc<NetworkBody>,
    dg_units: Vec<DGUnit>,
    v_min_pu: f64,
    v_max_pu: f64,
}

impl PartialEq for PhasedNetwork {
    fn eq(&self, other: &Self) -> bool {
        *self.body == *other.body
            && self.dg_units == other.dg_units
            && self.v_min_pu == other.v_min_pu
            && self.v_max_pu == other.v_max_pu
    }
}

impl PhasedNetwork {
    pub fn buses(&self) -> &[Bus] {
        &self.body.buses
    }

    pub fn segments(&self) -> &[LineSegment] {
        &self.body.segments
    }

    pub fn transformers(&self) -> &[Transformer] {
        &self.body.transformers
    }

    pub fn loads(&self) -> &[Load] {
        &self.body.loads
    }

    pub fn capacitors(&self) -> &[CapacitorBank] {
        &self.body.capacitors
    }

    pub fn regulators(&self) -> &[Regulator] {
        &self.body.regulators
    }

    pub fn dg_units(&self) -> &[DGUnit] {
        &self.dg_units
    }

    pub fn v_min_pu(&self) -> f64 {
        self.v_min_pu
    }

    pub fn v_max_pu(&self) -> f64 {
        self.v_max_pu
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.body.buses.binary_search_by(|b| b.id.as_str().cmp(id)).ok()
    }

    pub fn bus(&self, id: &str) -> Option<&Bus> {
        self.bus_index(id).map(|i| &self.body.buses[i])
    }

    pub fn source_index(&self) -> Option<usize> {
        self.body.buses.iter().position(|b| b.is_source)
    }

    pub fn branch_count(&self) -> usize {
        self.body.segments.len() + self.body.transformers.len()
    }

    /// Line segments first, then transformers, each block sorted by id.
    pub fn branch_ids(&self) -> impl Iterator<Item = BranchId> + '_ {
        let lines = (0..self.body.segments.len()).map(|i| BranchId {
            kind: BranchKind::Line,
            index: i,
        });
        let xfmrs = (0..self.body.transformers.len()).map(|i| BranchId {
            kind: BranchKind::Transformer,
            index: i,
        });
        lines.chain(xfmrs)
    }

    pub fn branch_id_str(&self, branch: BranchId) -> &str {
        match branch.kind {
            BranchKind::Line => &self.body.segments[branch.index].id,
            BranchKind::Transformer => &self.body.transformers[branch.index].id,
        }
    }

    pub fn branch_endpoints(&self, branch: BranchId) -> (&str, &str) {
        match branch.kind {
            BranchKind::Line => {
                let s = &self.body.segments[branch.index];
                (&s.from_bus, &s.to_bus)
            }
            BranchKind::Transformer => {
                let t = &self.body.transformers[branch.index];
                (&t.from_bus, &t.to_bus)
            }
        }
    }

    pub fn branch_phases(&self, branch: BranchId) -> PhaseSet {
        match branch.kind {
            BranchKind::Line => self.body.segments[branch.index].phases,
            BranchKind::Transformer => self.body.transformers[branch.index].phases,
        }
    }

    pub fn find_branch(&self, id: &str) -> Option<BranchId> {
        self.branch_ids().find(|b| self.branch_id_str(*b) == id)
    }

    /// Flat position of `branch` in solution vectors: lines first, then
    /// transformers.
    pub fn branch_flat_index(&self, branch: BranchId) -> usize {
        match branch.kind {
            BranchKind::Line => branch.index,
            BranchKind::Transformer => self.body.segments.len() + branch.index,
        }
    }

    /// Same topology and elements with the DG active powers replaced.
    /// `capacities_kw` must carry one entry per DG unit in id order.
    #[must_use]
    pub fn with_dg_capacities(&self, capacities_kw: &[f64]) -> PhasedNetwork {
        assert_eq!(
            capacities_kw.len(),
            self.dg_units.len(),
            "capacity vector length must match the DG unit count"
        );
        let mut dg_units = self.dg_units.clone();
        for (unit, &cap) in dg_units.iter_mut().zip(capacities_kw) {
            unit.capacity_kw = cap;
        }
        PhasedNetwork {
            body: Arc::clone(&self.body),
            dg_units,
            v_min_pu: self.v_min_pu,
            v_max_pu: self.v_max_pu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Line,
    Transformer,
}

/// Stable handle to one series branch of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchId {
    pub kind: BranchKind,
    pub index: usize,
}

#[derive(Debug, Default)]
pub struct NetworkBuilder {
    buses: Vec<Bus>,
    segments: Vec<LineSegment>,
    transformers: Vec<Transformer>,
    loads: Vec<Load>,
    capacitors: Vec<CapacitorBank>,
    regulators: Vec<Regulator>,
    dg_units: Vec<DGUnit>,
    v_min_pu: f64,
    v_max_pu: f64,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        NetworkBuilder {
            v_min_pu: DEFAULT_V_MIN_PU,
            v_max_pu: DEFAULT_V_MAX_PU,
            ..Default::default()
        }
    }

    pub fn voltage_band(mut self, v_min_pu: f64, v_max_pu: f64) -> Self {
        self.v_min_pu = v_min_pu;
        self.v_max_pu = v_max_pu;
        self
    }

    pub fn bus(mut self, bus: Bus) -> Self {
        self.buses.push(bus);
        self
    }

    pub fn segment(mut self, segment: LineSegment) -> Self {
        self.segments.push(segment);
        self
    }

    pub fn transformer(mut self, transformer: Transformer) -> Self {
        self.transformers.push(transformer);
        self
    }

    pub fn load(mut self, load: Load) -> Self {
        self.loads.push(load);
        self
    }

    pub fn capacitor(mut self, capacitor: CapacitorBank) -> Self {
        self.capacitors.push(capacitor);
        self
    }

    pub fn regulator(mut self, regulator: Regulator) -> Self {
        self.regulators.push(regulator);
        self
    }

    pub fn dg_unit(mut self, dg: DGUnit) -> Self {
        self.dg_units.push(dg);
        self
    }

    /// Freeze into a network. Collections are sorted by id so that element
    /// order never depends on insertion order; no validation happens here.
    pub fn build(mut self) -> PhasedNetwork {
        self.buses.sort_by(|a, b| a.id.cmp(&b.id));
        self.segments.sort_by(|a, b| a.id.cmp(&b.id));
        self.transformers.sort_by(|a, b| a.id.cmp(&b.id));
        self.loads.sort_by(|a, b| a.id.cmp(&b.id));
        self.capacitors.sort_by(|a, b| a.id.cmp(&b.id));
        self.regulators.sort_by(|a, b| a.id.cmp(&b.id));
        self.dg_units.sort_by(|a, b| a.id.cmp(&b.id));
        PhasedNetwork {
            body: Arc::new(NetworkBody {
                buses: self.buses,
                segments: self.segments,
                transformers: self.transformers,
                loads: self.loads,
                capacitors: self.capacitors,
                regulators: self.regulators,
            }),
            dg_units: self.dg_units,
            v_min_pu: self.v_min_pu,
            v_max_pu: self.v_max_pu,
        }
    }
}

/// One broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    pub element_id: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.element_id, self.reason)
    }
}

fn violation(id: &str, reason: impl Into<String>) -> Violation {
    Violation { element_id: id.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedBranch {
    pub branch: BranchId,
    pub parent_bus: usize,
    pub child_bus: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TopologyError {
    #[error("network is not a rooted radial tree: {0}")]
    NotRadial(String),
}

/// Breadth-first branch order from the source; every parent bus appears
/// before all of its children. Branch direction must already point away
/// from the source (`from` is the parent side).
pub fn radial_order(network: &PhasedNetwork) -> Result<Vec<OrderedBranch>, TopologyError> {
    let (order, problems) = trace_topology(network);
    match problems.into_iter().next() {
        None => Ok(order),
        Some(first) => Err(TopologyError::NotRadial(format!(
            "{}: {}",
            first.element_id, first.reason
        ))),
    }
}

/// Best-effort breadth-first trace plus every structural problem found.
fn trace_topology(network: &PhasedNetwork) -> (Vec<OrderedBranch>, Vec<Violation>) {
    let buses = network.buses();
    let mut problems = Vec::new();

    let sources: Vec<usize> = buses
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_source)
        .map(|(i, _)| i)
        .collect();
    if sources.is_empty() {
        problems.push(violation("network", "no source bus declared"));
        return (Vec::new(), problems);
    }
    for &extra in &sources[1..] {
        problems.push(violation(
            &buses[extra].id,
            "more than one source bus declared",
        ));
    }
    let root = sources[0];

    // Outgoing branches per bus, visited in branch id order.
    let mut outgoing: Vec<Vec<BranchId>> = vec![Vec::new(); buses.len()];
    let mut dangling = false;
    for branch in network.branch_ids() {
        let (from, to) = network.branch_endpoints(branch);
        match (network.bus_index(from), network.bus_index(to)) {
            (Some(f), Some(_)) => outgoing[f].push(branch),
            _ => {
                problems.push(violation(
                    network.branch_id_str(branch),
                    "endpoint references a bus that does not exist",
                ));
                dangling = true;
            }
        }
    }
    for list in &mut outgoing {
        list.sort_by(|a, b| network.branch_id_str(*a).cmp(network.branch_id_str(*b)));
    }

    let mut visited = vec![false; buses.len()];
    visited[root] = true;
    let mut order = Vec::with_capacity(network.branch_count());
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(bus) = queue.pop_front() {
        for &branch in &outgoing[bus] {
            let (_, to) = network.branch_endpoints(branch);
            let child = network.bus_index(to).expect("checked above");
            if visited[child] {
                problems.push(violation(
                    network.branch_id_str(branch),
                    "creates a loop or a second path to its to-side bus",
                ));
                continue;
            }
            visited[child] = true;
            order.push(OrderedBranch { branch, parent_bus: bus, child_bus: child });
            queue.push_back(child);
        }
    }

    if !dangling {
        for (i, bus) in buses.iter().enumerate() {
            if !visited[i] {
                problems.push(violation(&bus.id, "bus is not reachable from the source"));
            }
        }
    }

    (order, problems)
}

/// Checks every structural invariant and returns the full list of problems,
/// sorted by element id. An empty report means the network is well formed.
pub fn validate(network: &PhasedNetwork) -> Vec<Violation> {
    let mut report = Vec::new();
    let buses = network.buses();

    check_duplicate_ids(network, &mut report);

    for bus in buses {
        if bus.phases.is_empty() {
            report.push(violation(&bus.id, "bus carries no phases"));
        }
        if !(bus.nominal_voltage.is_finite() && bus.nominal_voltage > 0.0) {
            report.push(violation(&bus.id, "nominal voltage must be positive"));
        }
    }

    if !(network.v_min_pu > 0.0 && network.v_max_pu > network.v_min_pu) {
        report.push(violation(
            "network",
            "voltage band must satisfy 0 < v_min_pu < v_max_pu",
        ));
    }

    for segment in network.segments() {
        check_branch_common(
            network,
            &segment.id,
            &segment.from_bus,
            &segment.to_bus,
            segment.phases,
            &mut report,
        );
        if segment.z_matrix.dim() != segment.phases.len() {
            report.push(violation(
                &segment.id,
                format!(
                    "impedance matrix is {0}x{0} but the segment carries {1} phases",
                    segment.z_matrix.dim(),
                    segment.phases.len()
                ),
            ));
        } else {
            if !segment.z_matrix.is_symmetric(1e-12) {
                report.push(violation(&segment.id, "impedance matrix is not symmetric"));
            }
            if segment.z_matrix.inverse().is_none() {
                report.push(violation(&segment.id, "impedance matrix is singular"));
            }
        }
        if !(segment.ampacity.is_finite() && segment.ampacity > 0.0) {
            report.push(violation(&segment.id, "ampacity must be positive"));
        }
        if let Some(len) = segment.length_m {
            if !(len.is_finite() && len >= 0.0) {
                report.push(violation(&segment.id, "length must be non-negative"));
            }
        }
    }

    for t in network.transformers() {
        check_branch_common(network, &t.id, &t.from_bus, &t.to_bus, t.phases, &mut report);
        if !(t.rating_kva.is_finite() && t.rating_kva > 0.0) {
            report.push(violation(&t.id, "rating must be positive"));
        }
        if t.series_impedance_pu.norm() == 0.0 || !t.series_impedance_pu.is_finite() {
            report.push(violation(&t.id, "series impedance must be finite and nonzero"));
        }
        if !(t.tap.is_finite() && t.tap > 0.0) {
            report.push(violation(&t.id, "tap must be positive"));
        }
    }

    for load in network.loads() {
        check_attachment(network, &load.id, &load.bus, load.phases, &mut report);
        if load.connection == Connection::Delta && load.phases.len() < 2 {
            report.push(violation(
                &load.id,
                "delta connection needs at least two phases",
            ));
        }
        check_per_phase_len(&load.id, "kw", load.per_phase_kw.len(), load.phases, &mut report);
        check_per_phase_len(&load.id, "kvar", load.per_phase_kvar.len(), load.phases, &mut report);
        for v in load.per_phase_kw.iter().chain(&load.per_phase_kvar) {
            if !v.is_finite() {
                report.push(violation(&load.id, "power values must be finite"));
                break;
            }
        }
    }

    for cap in network.capacitors() {
        check_attachment(network, &cap.id, &cap.bus, cap.phases, &mut report);
        check_per_phase_len(&cap.id, "kvar", cap.per_phase_kvar.len(), cap.phases, &mut report);
        for v in &cap.per_phase_kvar {
            if !(v.is_finite() && *v >= 0.0) {
                report.push(violation(&cap.id, "rated kvar must be non-negative"));
                break;
            }
        }
    }

    let mut regulated = std::collections::BTreeMap::new();
    for reg in network.regulators() {
        match network.segments().iter().find(|s| s.id == reg.on_segment) {
            None => report.push(violation(
                &reg.id,
                format!("references line segment {} which does not exist", reg.on_segment),
            )),
            Some(segment) => {
                if reg.per_phase_tap.len() != segment.phases.len() {
                    report.push(violation(
                        &reg.id,
                        format!(
                            "has {} taps but segment {} carries {} phases",
                            reg.per_phase_tap.len(),
                            segment.id,
                            segment.phases.len()
                        ),
                    ));
                }
                if let Some(prev) = regulated.insert(reg.on_segment.clone(), reg.id.clone()) {
                    report.push(violation(
                        &reg.id,
                        format!("segment {} is already regulated by {prev}", reg.on_segment),
                    ));
                }
            }
        }
        for tap in &reg.per_phase_tap {
            if !(tap.is_finite() && *tap > 0.0) {
                report.push(violation(&reg.id, "taps must be positive"));
                break;
            }
        }
    }

    for dg in network.dg_units() {
        check_attachment(network, &dg.id, &dg.bus, dg.phases, &mut report);
        if !(dg.p_min_kw.is_finite() && dg.p_max_kw.is_finite() && dg.p_min_kw >= 0.0) {
            report.push(violation(&dg.id, "capacity bounds must be finite and non-negative"));
        } else if dg.p_min_kw > dg.p_max_kw {
            report.push(violation(&dg.id, "lower capacity bound exceeds the upper bound"));
        } else if !(dg.capacity_kw >= dg.p_min_kw && dg.capacity_kw <= dg.p_max_kw) {
            report.push(violation(
                &dg.id,
                "installed capacity lies outside the unit's bounds",
            ));
        }
    }

    let (_, topology_problems) = trace_topology(network);
    report.extend(topology_problems);

    report.sort();
    report.dedup();
    report
}

fn check_duplicate_ids(network: &PhasedNetwork, report: &mut Vec<Violation>) {
    let mut seen: std::collections::BTreeMap<String, &'static str> =
        std::collections::BTreeMap::new();
    let mut note = |kind: &'static str, id: &str, report: &mut Vec<Violation>| {
        if let Some(prev) = seen.insert(id.to_string(), kind) {
            report.push(violation(id, format!("id is shared by a {prev} and a {kind}")));
        }
    };
    for b in network.buses() {
        note("bus", &b.id, report);
    }
    for s in network.segments() {
        note("line", &s.id, report);
    }
    for t in network.transformers() {
        note("transformer", &t.id, report);
    }
    for l in network.loads() {
        note("load", &l.id, report);
    }
    for c in network.capacitors() {
        note("capacitor", &c.id, report);
    }
    for r in network.regulators() {
        note("regulator", &r.id, report);
    }
    for d in network.dg_units() {
        note("dg", &d.id, report);
    }
}

fn check_branch_common(
    network: &PhasedNetwork,
    id: &str,
    from: &str,
    to: &str,
    phases: PhaseSet,
    report: &mut Vec<Violation>,
) {
    if phases.is_empty() {
        report.push(violation(id, "branch carries no phases"));
    }
    if from == to {
        report.push(violation(id, "branch connects a bus to itself"));
    }
    match network.bus(from) {
        None => report.push(violation(id, format!("from bus {from} does not exist"))),
        Some(bus) => {
            if !phases.is_subset_of(bus.phases) {
                report.push(violation(
                    id,
                    format!("carries phases {phases} missing at from bus {from}"),
                ));
            }
        }
    }
    match network.bus(to) {
        None => report.push(violation(id, format!("to bus {to} does not exist"))),
        Some(bus) => {
            if !phases.is_subset_of(bus.phases) {
                report.push(violation(
                    id,
                    format!("carries phases {phases} missing at to bus {to}"),
                ));
            }
            // The to side is the child in a radial tree: the branch is its
            // only supply, so it must cover every phase the bus has.
            if !bus.phases.is_subset_of(phases) {
                report.push(violation(
                    id,
                    format!("feeds bus {to} but does not carry all of its phases"),
                ));
            }
        }
    }
}

fn check_attachment(
    network: &PhasedNetwork,
    id: &str,
    bus: &str,
    phases: PhaseSet,
    report: &mut Vec<Violation>,
) {
    if phases.is_empty() {
        report.push(violation(id, "element carries no phases"));
    }
    match network.bus(bus) {
        None => report.push(violation(id, format!("bus {bus} does not exist"))),
        Some(b) => {
            if !phases.is_subset_of(b.phases) {
                report.push(violation(
                    id,
                    format!("uses phases {phases} missing at bus {bus}"),
                ));
            }
        }
    }
}

fn check_per_phase_len(
    id: &str,
    what: &str,
    got: usize,
    phases: PhaseSet,
    report: &mut Vec<Violation>,
) {
    if got != phases.len() {
        report.push(violation(
            id,
            format!("{what} has {got} entries but the element carries {} phases", phases.len()),
        ));
    }
}
