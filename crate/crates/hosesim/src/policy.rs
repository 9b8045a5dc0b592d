//! Path selection strategies over provisioned candidate paths.
//!
//! A (source, destination) pair can have several pre-provisioned paths,
//! each with a bandwidth allocation. A selection strategy decides which
//! one carries traffic. Strategies implement [`PathPolicy`] and are
//! registered by name, so the active one is a runtime choice (config
//! key or CLI flag), not a compile-time one.
//!
//! The default strategy picks the feasible path with the *smallest*
//! allocation: it keeps the fattest paths in reserve and loads the path
//! that is closest to "just enough" for the demand. When the selected
//! path dies, re-selection walks to the next-smallest feasible one.

use thiserror::Error;

use crate::topology::PathSpec;

/// A provisioned path plus the bandwidth reserved for it.
#[derive(Debug, Clone)]
pub struct CandidatePath {
    pub path: PathSpec,
    pub allocated_bw_bps: u64,
    pub alive: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("no candidate paths given")]
    NoCandidates,
    #[error("duplicate path label {0:?}")]
    DuplicateLabel(String),
    #[error("path {0:?} has no allocated bandwidth")]
    ZeroAllocation(String),
    #[error("path {0:?} does not share the table's endpoints")]
    MixedEndpoints(String),
    #[error("no path labelled {0:?}")]
    UnknownLabel(String),
    #[error("no strategy named {0:?}")]
    UnknownPolicy(String),
}

/// Candidate paths for one pair, plus which one is currently selected.
#[derive(Debug, Clone)]
pub struct PathTable {
    candidates: Vec<CandidatePath>,
    selected: Option<usize>,
}

impl PathTable {
    /// Candidates must be non-empty, uniquely labelled, share endpoints,
    /// and have positive allocations.
    pub fn new(candidates: Vec<CandidatePath>) -> Result<PathTable, PolicyError> {
        let first = candidates.first().ok_or(PolicyError::NoCandidates)?;
        let ends = (first.path.src(), first.path.dst());
        let mut labels = std::collections::BTreeSet::new();
        for c in &candidates {
            if !labels.insert(c.path.label.clone()) {
                return Err(PolicyError::DuplicateLabel(c.path.label.clone()));
            }
            if c.allocated_bw_bps == 0 {
                return Err(PolicyError::ZeroAllocation(c.path.label.clone()));
            }
            if (c.path.src(), c.path.dst()) != ends {
                return Err(PolicyError::MixedEndpoints(c.path.label.clone()));
            }
        }
        Ok(PathTable { candidates, selected: None })
    }

    pub fn candidates(&self) -> &[CandidatePath] {
        &self.candidates
    }

    pub fn get(&self, label: &str) -> Option<&CandidatePath> {
        self.candidates.iter().find(|c| c.path.label == label)
    }

    pub fn selected(&self) -> Option<&CandidatePath> {
        self.selected.map(|i| &self.candidates[i])
    }

    pub fn selected_label(&self) -> Option<&str> {
        self.selected().map(|c| c.path.label.as_str())
    }

    /// Marks a path dead. A dead selected path is deselected on the spot
    /// so stale state never lingers until the next selection.
    pub fn mark_failed(&mut self, label: &str) -> Result<(), PolicyError> {
        let idx = self.index_of(label)?;
        self.candidates[idx].alive = false;
        if self.selected == Some(idx) {
            self.selected = None;
        }
        Ok(())
    }

    pub fn mark_alive(&mut self, label: &str) -> Result<(), PolicyError> {
        let idx = self.index_of(label)?;
        self.candidates[idx].alive = true;
        Ok(())
    }

    /// Runs the strategy and records its choice.
    pub fn select_path(
        &mut self,
        policy: &dyn PathPolicy,
        demand_bps: u64,
    ) -> Option<&CandidatePath> {
        self.selected = policy.select(self, demand_bps);
        self.selected()
    }

    /// A path just died: mark it and immediately re-select.
    pub fn handle_path_failure(
        &mut self,
        policy: &dyn PathPolicy,
        failed_label: &str,
        demand_bps: u64,
    ) -> Result<Option<&CandidatePath>, PolicyError> {
        self.mark_failed(failed_label)?;
        Ok(self.select_path(policy, demand_bps))
    }

    fn index_of(&self, label: &str) -> Result<usize, PolicyError> {
        self.candidates
            .iter()
            .position(|c| c.path.label == label)
            .ok_or_else(|| PolicyError::UnknownLabel(label.to_string()))
    }
}

/// Candidates a strategy may choose from: alive with enough allocation.
fn feasible<'a>(
    table: &'a PathTable,
    demand_bps: u64,
) -> impl Iterator<Item = (usize, &'a CandidatePath)> {
    table
        .candidates()
        .iter()
        .enumerate()
        .filter(move |(_, c)| c.alive && c.allocated_bw_bps >= demand_bps)
}

/// A path selection strategy. Implementations must be deterministic:
/// equal tables and demands always give equal choices.
pub trait PathPolicy {
    fn name(&self) -> &'static str;

    /// Index of the chosen candidate, or None when nothing is feasible.
    fn select(&self, table: &PathTable, demand_bps: u64) -> Option<usize>;
}

/// Smallest feasible allocation; ties broken by label.
pub struct MinBandwidth;

impl PathPolicy for MinBandwidth {
    fn name(&self) -> &'static str {
        "min-bandwidth"
    }

    fn select(&self, table: &PathTable, demand_bps: u64) -> Option<usize> {
        feasible(table, demand_bps)
            .min_by(|(_, a), (_, b)| {
                a.allocated_bw_bps
                    .cmp(&b.allocated_bw_bps)
                    .then_with(|| a.path.label.cmp(&b.path.label))
            })
            .map(|(i, _)| i)
    }
}

/// Largest feasible allocation; ties broken by label.
pub struct MaxBandwidth;

impl PathPolicy for MaxBandwidth {
    fn name(&self) -> &'static str {
        "max-bandwidth"
    }

    fn select(&self, table: &PathTable, demand_bps: u64) -> Option<usize> {
        feasible(table, demand_bps)
            .min_by(|(_, a), (_, b)| {
                b.allocated_bw_bps
                    .cmp(&a.allocated_bw_bps)
                    .then_with(|| a.path.label.cmp(&b.path.label))
            })
            .map(|(i, _)| i)
    }
}

/// First feasible candidate in configuration order.
pub struct FirstFeasible;

impl PathPolicy for FirstFeasible {
    fn name(&self) -> &'static str {
        "first-feasible"
    }

    fn select(&self, table: &PathTable, demand_bps: u64) -> Option<usize> {
        feasible(table, demand_bps).next().map(|(i, _)| i)
    }
}

pub const DEFAULT_POLICY: &str = "min-bandwidth";

/// Names accepted by [`policy_by_name`], in presentation order.
pub fn policy_names() -> &'static [&'static str] {
    &["min-bandwidth", "max-bandwidth", "first-feasible"]
}

/// Instantiates a registered strategy by its name.
pub fn policy_by_name(name: &str) -> Result<Box<dyn PathPolicy>, PolicyError> {
    match name {
        "min-bandwidth" => Ok(Box::new(MinBandwidth)),
        "max-bandwidth" => Ok(Box::new(MaxBandwidth)),
        "first-feasible" => Ok(Box::new(FirstFeasible)),
        other => Err(PolicyError::UnknownPolicy(other.to_string())),
    }
}
