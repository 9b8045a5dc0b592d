//! Hose-model bandwidth reservations.
//!
//! Instead of declaring a demand for every node pair, each endpoint of a
//! provisioned overlay declares two aggregate bounds: the most traffic it
//! will ever send (egress) and the most it will ever receive (ingress).
//! A traffic matrix is admissible when every row sum respects the
//! sender's egress bound and every column sum respects the receiver's
//! ingress bound. A link reservation is sufficient only if it covers the
//! load of *every* admissible matrix, so the minimal reservation on a
//! link is the exact maximum of the load over that polytope.
//!
//! That maximum is a small transportation-style linear program: the load
//! on a link is linear in the demands, with per-pair coefficients equal
//! to the fraction of the pair's traffic routed across the link. It is
//! solved exactly over rationals (see `transport`); converting `f64`
//! bounds and weights to rationals is lossless, so the only rounding is
//! the final cast of the optimum back to `f64`.

mod transport;

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::topology::{LinkKey, NodeId, PathSpec};

/// Absolute slack allowed when checking fraction sums and bound
/// inequalities expressed in `f64`.
pub const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointBounds {
    /// Most traffic the endpoint ever sends, bits/s.
    pub egress_bps: f64,
    /// Most traffic the endpoint ever receives, bits/s.
    pub ingress_bps: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum HoseError {
    #[error("endpoint {0} has no declared hose bounds")]
    UnknownEndpoint(NodeId),
    #[error("no routing fractions defined for pair {src} -> {dst}")]
    MissingRoutes { src: NodeId, dst: NodeId },
    #[error("routing fractions for pair {src} -> {dst} sum to {sum}, expected 1")]
    BadFractionSum { src: NodeId, dst: NodeId, sum: f64 },
    #[error("routing fraction {fraction} for pair {src} -> {dst} is negative")]
    NegativeFraction { src: NodeId, dst: NodeId, fraction: f64 },
    #[error("derived weight {weight} for pair {src} -> {dst} lies outside [0, 1]")]
    WeightOutOfRange { src: NodeId, dst: NodeId, weight: f64 },
    #[error("bound {0} must be finite and nonnegative")]
    InvalidBound(f64),
    #[error("demand {0} must be finite and nonnegative")]
    InvalidDemand(f64),
    #[error("traffic from a node to itself ({0}) is not modeled")]
    SelfPair(NodeId),
    #[error("path {label:?} does not run {src} -> {dst}")]
    PathEndpointMismatch { label: String, src: NodeId, dst: NodeId },
    #[error("hose bounds need at least one endpoint")]
    NoEndpoints,
}

/// The set of overlay endpoints with their egress/ingress bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct HoseSpec {
    bounds: BTreeMap<NodeId, EndpointBounds>,
}

impl HoseSpec {
    pub fn new(bounds: BTreeMap<NodeId, EndpointBounds>) -> Result<HoseSpec, HoseError> {
        if bounds.is_empty() {
            return Err(HoseError::NoEndpoints);
        }
        for b in bounds.values() {
            for v in [b.egress_bps, b.ingress_bps] {
                if !v.is_finite() || v < 0.0 {
                    return Err(HoseError::InvalidBound(v));
                }
            }
        }
        Ok(HoseSpec { bounds })
    }

    pub fn endpoints(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.bounds.keys().copied()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.bounds.contains_key(&node)
    }

    pub fn bounds(&self, node: NodeId) -> Result<EndpointBounds, HoseError> {
        self.bounds.get(&node).copied().ok_or(HoseError::UnknownEndpoint(node))
    }
}

/// A concrete pairwise demand assignment, bits/s. Absent pairs are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrafficMatrix {
    demands: BTreeMap<(NodeId, NodeId), f64>,
}

impl TrafficMatrix {
    pub fn new() -> TrafficMatrix {
        TrafficMatrix::default()
    }

    pub fn set(&mut self, src: NodeId, dst: NodeId, bps: f64) -> Result<(), HoseError> {
        if src == dst {
            return Err(HoseError::SelfPair(src));
        }
        if !bps.is_finite() || bps < 0.0 {
            return Err(HoseError::InvalidDemand(bps));
        }
        self.demands.insert((src, dst), bps);
        Ok(())
    }

    pub fn get(&self, src: NodeId, dst: NodeId) -> f64 {
        self.demands.get(&(src, dst)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.demands.iter().map(|(&(s, d), &v)| (s, d, v))
    }
}

/// Per-pair split of traffic across one or more paths. The fractions of
/// a pair must sum to one before the loads they induce are meaningful.
#[derive(Debug, Clone, Default)]
pub struct RoutingFractions {
    routes: BTreeMap<(NodeId, NodeId), Vec<(PathSpec, f64)>>,
}

impl RoutingFractions {
    pub fn new() -> RoutingFractions {
        RoutingFractions::default()
    }

    pub fn add_route(
        &mut self,
        src: NodeId,
        dst: NodeId,
        path: PathSpec,
        fraction: f64,
    ) -> Result<(), HoseError> {
        if src == dst {
            return Err(HoseError::SelfPair(src));
        }
        if path.src() != Some(src) || path.dst() != Some(dst) {
            return Err(HoseError::PathEndpointMismatch { label: path.label.clone(), src, dst });
        }
        if !fraction.is_finite() || fraction < 0.0 {
            return Err(HoseError::NegativeFraction { src, dst, fraction });
        }
        self.routes.entry((src, dst)).or_default().push((path, fraction));
        Ok(())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.routes.keys().copied()
    }

    pub fn has_pair(&self, src: NodeId, dst: NodeId) -> bool {
        self.routes.contains_key(&(src, dst))
    }

    /// Every pair's fractions must sum to one within [`TOLERANCE`].
    pub fn validate(&self) -> Result<(), HoseError> {
        for (&(src, dst), routes) in &self.routes {
            let sum: f64 = routes.iter().map(|(_, f)| f).sum();
            if (sum - 1.0).abs() > TOLERANCE {
                return Err(HoseError::BadFractionSum { src, dst, sum });
            }
        }
        Ok(())
    }

    /// Fraction of the pair's traffic that crosses `link`: the sum of the
    /// fractions of this pair's paths that traverse it. Paths are
    /// loop-free, so each path counts a link at most once.
    pub fn link_weight(&self, src: NodeId, dst: NodeId, link: LinkKey) -> Option<f64> {
        self.routes.get(&(src, dst)).map(|routes| {
            routes
                .iter()
                .filter(|(path, _)| path.links().any(|l| l == link))
                .map(|(_, f)| f)
                .sum()
        })
    }

    /// Union of links used by any registered path, in canonical order.
    pub fn links_used(&self) -> Vec<LinkKey> {
        let mut links: Vec<LinkKey> =
            self.routes.values().flatten().flat_map(|(p, _)| p.links()).collect();
        links.sort_unstable();
        links.dedup();
        links
    }
}

/// True when `matrix` respects every egress and ingress bound, within
/// [`TOLERANCE`]. Demands on nodes without declared bounds are an error.
pub fn validate_traffic_matrix(
    matrix: &TrafficMatrix,
    hose: &HoseSpec,
) -> Result<bool, HoseError> {
    let mut egress: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut ingress: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (src, dst, demand) in matrix.iter() {
        for node in [src, dst] {
            if !hose.contains(node) {
                return Err(HoseError::UnknownEndpoint(node));
            }
        }
        *egress.entry(src).or_default() += demand;
        *ingress.entry(dst).or_default() += demand;
    }
    for (node, sent) in egress {
        if sent > hose.bounds(node)?.egress_bps + TOLERANCE {
            return Ok(false);
        }
    }
    for (node, received) in ingress {
        if received > hose.bounds(node)?.ingress_bps + TOLERANCE {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Load a concrete matrix puts on `link` under the given routing split.
/// Every pair with positive demand must have routes defined.
pub fn link_load(
    matrix: &TrafficMatrix,
    fractions: &RoutingFractions,
    link: LinkKey,
) -> Result<f64, HoseError> {
    fractions.validate()?;
    let mut load = 0.0;
    for (src, dst, demand) in matrix.iter() {
        if demand == 0.0 {
            continue;
        }
        let weight = fractions
            .link_weight(src, dst, link)
            .ok_or(HoseError::MissingRoutes { src, dst })?;
        load += demand * weight;
    }
    Ok(load)
}

/// Worst-case link load together with a matrix that attains it.
#[derive(Debug, Clone)]
pub struct WorstCaseLoad {
    pub load_bps: f64,
    /// Admissible matrix whose load on the link equals `load_bps`.
    pub witness: TrafficMatrix,
}

/// Exact maximum of the load on `link` over all admissible matrices.
///
/// A pair with no routes defined is allowed only if its demand is forced
/// to zero by the bounds; otherwise its placement would be unknown and
/// the maximum undefined.
pub fn worst_case_link_load(
    fractions: &RoutingFractions,
    hose: &HoseSpec,
    link: LinkKey,
) -> Result<WorstCaseLoad, HoseError> {
    fractions.validate()?;
    let endpoints: Vec<NodeId> = hose.endpoints().collect();
    let mut cells = Vec::new();
    let mut pair_of_cell = Vec::new();
    for (i, &src) in endpoints.iter().enumerate() {
        for (j, &dst) in endpoints.iter().enumerate() {
            if src == dst {
                continue;
            }
            let weight = match fractions.link_weight(src, dst, link) {
                Some(w) => w,
                None => {
                    let cap = hose
                        .bounds(src)?
                        .egress_bps
                        .min(hose.bounds(dst)?.ingress_bps);
                    if cap > 0.0 {
                        return Err(HoseError::MissingRoutes { src, dst });
                    }
                    continue;
                }
            };
            if !(-TOLERANCE..=1.0 + TOLERANCE).contains(&weight) {
                return Err(HoseError::WeightOutOfRange { src, dst, weight });
            }
            let weight = weight.clamp(0.0, 1.0);
            if weight == 0.0 {
                continue;
            }
            cells.push(transport::Cell { row: i, col: j, weight: exact(weight) });
            pair_of_cell.push((src, dst));
        }
    }
    let instance = transport::Instance {
        row_caps: endpoints
            .iter()
            .map(|&e| Ok(exact(hose.bounds(e)?.egress_bps)))
            .collect::<Result<_, HoseError>>()?,
        col_caps: endpoints
            .iter()
            .map(|&e| Ok(exact(hose.bounds(e)?.ingress_bps)))
            .collect::<Result<_, HoseError>>()?,
        cells,
    };
    let solution = transport::maximize(&instance);
    let mut witness = TrafficMatrix::new();
    for (value, &(src, dst)) in solution.cell_values.iter().zip(&pair_of_cell) {
        let bps = value.to_f64().expect("vertex coordinate fits in f64");
        if bps > 0.0 {
            witness.set(src, dst, bps)?;
        }
    }
    let load_bps = solution.objective.to_f64().expect("optimum fits in f64");
    debug_assert_eq!(validate_traffic_matrix(&witness, hose), Ok(true));
    Ok(WorstCaseLoad { load_bps, witness })
}

/// Bandwidth to reserve per link, bits/s.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reservation {
    per_link: BTreeMap<LinkKey, f64>,
}

impl Reservation {
    pub fn get(&self, link: LinkKey) -> f64 {
        self.per_link.get(&link).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LinkKey, f64)> + '_ {
        self.per_link.iter().map(|(&k, &v)| (k, v))
    }
}

/// Smallest sufficient reservation on each listed link: exactly the
/// worst-case load there, so it is both sufficient and tight.
pub fn minimal_reservation(
    fractions: &RoutingFractions,
    hose: &HoseSpec,
    links: &[LinkKey],
) -> Result<Reservation, HoseError> {
    let mut per_link = BTreeMap::new();
    for &link in links {
        let worst = worst_case_link_load(fractions, hose, link)?;
        per_link.insert(link, worst.load_bps);
    }
    Ok(Reservation { per_link })
}

/// Total reserved bandwidth, the capacity planning figure of merit.
pub fn reservation_cost(reservation: &Reservation) -> f64 {
    reservation.iter().map(|(_, bps)| bps).sum()
}

fn exact(value: f64) -> BigRational {
    BigRational::from_float(value).expect("finite by validation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(i: u32) -> NodeId {
        NodeId(i)
    }

    fn spec(bounds: &[(u32, f64, f64)]) -> HoseSpec {
        HoseSpec::new(
            bounds
                .iter()
                .map(|&(i, egress, ingress)| {
                    (node(i), EndpointBounds { egress_bps: egress, ingress_bps: ingress })
                })
                .collect(),
        )
        .unwrap()
    }

    /// Direct path crossing the probe link (0,1), regardless of endpoints.
    fn crossing_path(u: NodeId, v: NodeId) -> PathSpec {
        let (a, b) = (node(0), node(1));
        let mut hops = vec![u];
        if u != a && u != b {
            if v == a {
                hops.push(b);
            } else {
                hops.extend([a, b]);
            }
        } else if u == b {
            hops.push(a);
        } else {
            hops.push(b);
        }
        if *hops.last().unwrap() != v {
            hops.push(v);
        }
        PathSpec::new("cross", hops)
    }

    /// Detour path avoiding link (0,1), via a spare node id.
    fn detour_path(u: NodeId, v: NodeId, spare: u32) -> PathSpec {
        PathSpec::new("detour", vec![u, node(spare), v])
    }

    fn probe() -> LinkKey {
        LinkKey::new(node(0), node(1))
    }

    /// Fractions routing `weight` of each listed pair across the probe link.
    fn fractions_with_weights(pairs: &[(u32, u32, f64)]) -> RoutingFractions {
        let mut f = RoutingFractions::new();
        for (k, &(u, v, w)) in pairs.iter().enumerate() {
            let (u, v) = (node(u), node(v));
            if w > 0.0 {
                f.add_route(u, v, crossing_path(u, v), w).unwrap();
            }
            if w < 1.0 {
                f.add_route(u, v, detour_path(u, v, 100 + k as u32), 1.0 - w).unwrap();
            }
        }
        f
    }

    #[test]
    fn matrix_validation_checks_row_and_column_sums() {
        let hose = spec(&[(0, 1.0, 1.0), (1, 1.0, 1.0), (2, 1.0, 1.0)]);
        let mut ok = TrafficMatrix::new();
        ok.set(node(0), node(1), 0.6).unwrap();
        ok.set(node(0), node(2), 0.4).unwrap();
        assert_eq!(validate_traffic_matrix(&ok, &hose), Ok(true));

        // Row sum 1.1 exceeds the sender's egress bound of 1.
        let mut over = TrafficMatrix::new();
        over.set(node(0), node(1), 0.6).unwrap();
        over.set(node(0), node(2), 0.5).unwrap();
        assert_eq!(validate_traffic_matrix(&over, &hose), Ok(false));

        // Column sum can violate even when all rows are fine.
        let mut col_over = TrafficMatrix::new();
        col_over.set(node(0), node(2), 0.7).unwrap();
        col_over.set(node(1), node(2), 0.7).unwrap();
        assert_eq!(validate_traffic_matrix(&col_over, &hose), Ok(false));

        let mut foreign = TrafficMatrix::new();
        foreign.set(node(0), node(9), 0.1).unwrap();
        assert_eq!(
            validate_traffic_matrix(&foreign, &hose),
            Err(HoseError::UnknownEndpoint(node(9)))
        );
    }

    #[test]
    fn matrix_rejects_self_pairs_and_bad_demands() {
        let mut m = TrafficMatrix::new();
        assert_eq!(m.set(node(3), node(3), 1.0), Err(HoseError::SelfPair(node(3))));
        assert_eq!(m.set(node(0), node(1), -1.0), Err(HoseError::InvalidDemand(-1.0)));
        assert!(m.set(node(0), node(1), f64::NAN).is_err());
    }

    #[test]
    fn link_load_is_the_weighted_demand_sum() {
        // Half the pair's traffic crosses the probe link.
        let f = fractions_with_weights(&[(0, 1, 0.5)]);
        let mut m = TrafficMatrix::new();
        m.set(node(0), node(1), 2.0).unwrap();
        assert!((link_load(&m, &f, probe()).unwrap() - 1.0).abs() < TOLERANCE);
        // Zero-demand pairs need no routes; positive-demand pairs do.
        m.set(node(1), node(0), 0.0).unwrap();
        assert!(link_load(&m, &f, probe()).is_ok());
        m.set(node(1), node(0), 0.25).unwrap();
        assert_eq!(
            link_load(&m, &f, probe()),
            Err(HoseError::MissingRoutes { src: node(1), dst: node(0) })
        );
    }

    #[test]
    fn fraction_sums_must_reach_one() {
        let mut f = RoutingFractions::new();
        f.add_route(node(0), node(1), crossing_path(node(0), node(1)), 0.6).unwrap();
        f.add_route(node(0), node(1), detour_path(node(0), node(1), 7), 0.3).unwrap();
        match f.validate() {
            Err(HoseError::BadFractionSum { sum, .. }) => assert!((sum - 0.9).abs() < 1e-12),
            other => panic!("expected BadFractionSum, got {other:?}"),
        }
        assert!(f
            .add_route(node(0), node(1), crossing_path(node(0), node(1)), -0.1)
            .is_err());
        // Path endpoints must match the pair they are registered under.
        assert_eq!(
            f.add_route(node(0), node(2), crossing_path(node(0), node(1)), 1.0),
            Err(HoseError::PathEndpointMismatch {
                label: "cross".into(),
                src: node(0),
                dst: node(2)
            })
        );
    }

    // Both directions of one pair fully cross the link; each direction is
    // capped at 1 by its sender and receiver, so the worst case is 2.
    // The oracle scans demand pairs on a 0.01 grid.
    #[test]
    fn worst_case_two_way_pair() {
        let hose = spec(&[(0, 1.0, 1.0), (1, 1.0, 1.0)]);
        let f = fractions_with_weights(&[(0, 1, 1.0), (1, 0, 1.0)]);
        let got = worst_case_link_load(&f, &hose, probe()).unwrap();

        let mut best = 0.0f64;
        for i in 0..=100 {
            for j in 0..=100 {
                let (d01, d10) = (i as f64 / 100.0, j as f64 / 100.0);
                if d01 <= 1.0 && d10 <= 1.0 {
                    best = best.max(d01 + d10);
                }
            }
        }
        assert!((got.load_bps - best).abs() < 1e-2);
        assert!((got.load_bps - 2.0).abs() < TOLERANCE);
        assert_eq!(validate_traffic_matrix(&got.witness, &hose), Ok(true));
        assert!(
            (link_load(&got.witness, &f, probe()).unwrap() - got.load_bps).abs() < TOLERANCE
        );
    }

    // Two senders share one receiver whose ingress bound is 1, so the
    // link can never carry more than 1 even though egress sums to 2.
    #[test]
    fn worst_case_receiver_bound_binds() {
        let hose = spec(&[(0, 0.0, 1.0), (2, 1.0, 0.0), (3, 1.0, 0.0)]);
        let mut f = RoutingFractions::new();
        for u in [2, 3] {
            f.add_route(node(u), node(0), crossing_path(node(u), node(0)), 1.0).unwrap();
        }
        let got = worst_case_link_load(&f, &hose, probe()).unwrap();

        let mut best = 0.0f64;
        for i in 0..=100 {
            for j in 0..=100 {
                let (d20, d30) = (i as f64 / 100.0, j as f64 / 100.0);
                if d20 + d30 <= 1.0 {
                    best = best.max(d20 + d30);
                }
            }
        }
        assert!((got.load_bps - best).abs() < 1e-2);
        assert!((got.load_bps - 1.0).abs() < TOLERANCE);
    }

    // One sender, one receiver, a single full-fraction path: the smaller
    // of the two bounds is the exact reservation.
    #[test]
    fn single_pair_reservation_is_min_of_bounds() {
        for (egress, ingress) in [(1e6, 1e6), (2.5e6, 1e6), (0.75e6, 3e6), (0.0, 5e6)] {
            let hose = spec(&[(0, egress, 0.0), (1, 0.0, ingress)]);
            let mut f = RoutingFractions::new();
            f.add_route(node(0), node(1), crossing_path(node(0), node(1)), 1.0).unwrap();
            let r = minimal_reservation(&f, &hose, &[probe()]).unwrap();
            assert!(
                (r.get(probe()) - egress.min(ingress)).abs() < TOLERANCE,
                "bounds ({egress}, {ingress})"
            );
            assert!((reservation_cost(&r) - egress.min(ingress)).abs() < TOLERANCE);
        }
    }

    #[test]
    fn missing_routes_matter_only_for_pairs_that_can_send() {
        // Pair (1,0) has no routes but its joint capacity is zero: fine.
        let hose = spec(&[(0, 1.0, 0.0), (1, 0.0, 1.0)]);
        let mut f = RoutingFractions::new();
        f.add_route(node(0), node(1), crossing_path(node(0), node(1)), 1.0).unwrap();
        assert!(worst_case_link_load(&f, &hose, probe()).is_ok());

        // Give the reverse direction capacity and it must have routes.
        let hose = spec(&[(0, 1.0, 1.0), (1, 1.0, 1.0)]);
        assert_eq!(
            worst_case_link_load(&f, &hose, probe()).unwrap_err(),
            HoseError::MissingRoutes { src: node(1), dst: node(0) }
        );
    }

    /// Random valid matrix under `hose`, built by scaling rows then
    /// columns down until both bound families hold.
    fn random_valid_matrix(hose: &HoseSpec, rng: &mut ChaCha8Rng) -> TrafficMatrix {
        let endpoints: Vec<NodeId> = hose.endpoints().collect();
        let mut m = TrafficMatrix::new();
        for &u in &endpoints {
            for &v in &endpoints {
                if u != v {
                    let cap = hose.bounds(u).unwrap().egress_bps.min(hose.bounds(v).unwrap().ingress_bps);
                    m.set(u, v, rng.random_range(0.0..=1.0) * cap).unwrap();
                }
            }
        }
        for &u in &endpoints {
            let row: f64 = endpoints.iter().filter(|&&v| v != u).map(|&v| m.get(u, v)).sum();
            let bound = hose.bounds(u).unwrap().egress_bps;
            if row > bound {
                let scale = bound / row;
                for &v in &endpoints {
                    if v != u {
                        m.set(u, v, m.get(u, v) * scale).unwrap();
                    }
                }
            }
        }
        for &v in &endpoints {
            let col: f64 = endpoints.iter().filter(|&&u| u != v).map(|&u| m.get(u, v)).sum();
            let bound = hose.bounds(v).unwrap().ingress_bps;
            if col > bound {
                let scale = bound / col;
                for &u in &endpoints {
                    if u != v {
                        m.set(u, v, m.get(u, v) * scale).unwrap();
                    }
                }
            }
        }
        m
    }

    // No admissible matrix may ever exceed the claimed worst case, and the
    // witness must attain it. 1000 sampled matrices across 50 instances.
    #[test]
    fn worst_case_dominates_random_valid_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB0551);
        for _ in 0..50 {
            let ids = [0u32, 1, 2];
            let hose = spec(
                &ids.map(|i| {
                    (
                        i,
                        rng.random_range(0..=20) as f64 / 10.0,
                        rng.random_range(0..=20) as f64 / 10.0,
                    )
                }),
            );
            let pairs: Vec<(u32, u32, f64)> = ids
                .iter()
                .flat_map(|&u| ids.iter().map(move |&v| (u, v)))
                .filter(|&(u, v)| u != v)
                .map(|(u, v)| (u, v, rng.random_range(0..=100) as f64 / 100.0))
                .collect();
            let f = fractions_with_weights(&pairs);
            let worst = worst_case_link_load(&f, &hose, probe()).unwrap();
            assert_eq!(validate_traffic_matrix(&worst.witness, &hose), Ok(true));
            let attained = link_load(&worst.witness, &f, probe()).unwrap();
            assert!((attained - worst.load_bps).abs() < TOLERANCE);
            for _ in 0..20 {
                let m = random_valid_matrix(&hose, &mut rng);
                assert_eq!(validate_traffic_matrix(&m, &hose), Ok(true));
                let load = link_load(&m, &f, probe()).unwrap();
                assert!(
                    load <= worst.load_bps + TOLERANCE,
                    "sampled load {load} exceeds claimed worst case {}",
                    worst.load_bps
                );
            }
        }
    }

    // Loosening any single bound can never shrink the worst case.
    #[test]
    fn worst_case_is_monotone_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xCAFE);
        for _ in 0..100 {
            let ids = [0u32, 1, 2];
            let raw: Vec<(u32, f64, f64)> = ids
                .iter()
                .map(|&i| {
                    (
                        i,
                        rng.random_range(0..=10) as f64 / 5.0,
                        rng.random_range(0..=10) as f64 / 5.0,
                    )
                })
                .collect();
            let pairs: Vec<(u32, u32, f64)> = ids
                .iter()
                .flat_map(|&u| ids.iter().map(move |&v| (u, v)))
                .filter(|&(u, v)| u != v)
                .map(|(u, v)| (u, v, rng.random_range(0..=4) as f64 / 4.0))
                .collect();
            let f = fractions_with_weights(&pairs);
            let base = worst_case_link_load(&f, &spec(&raw), probe()).unwrap().load_bps;

            let mut loosened = raw.clone();
            let which = rng.random_range(0..loosened.len());
            if rng.random_range(0..2) == 0 {
                loosened[which].1 += rng.random_range(1..=10) as f64 / 10.0;
            } else {
                loosened[which].2 += rng.random_range(1..=10) as f64 / 10.0;
            }
            let bigger = worst_case_link_load(&f, &spec(&loosened), probe()).unwrap().load_bps;
            assert!(bigger >= base - 1e-12, "loosening a bound shrank {base} to {bigger}");
        }
    }

    #[test]
    fn reservation_cost_sums_links() {
        let hose = spec(&[(0, 3.0, 0.0), (1, 0.0, 2.0)]);
        let mut f = RoutingFractions::new();
        // Split the pair evenly over the direct link and a two-link detour.
        f.add_route(node(0), node(1), crossing_path(node(0), node(1)), 0.5).unwrap();
        f.add_route(node(0), node(1), detour_path(node(0), node(1), 9), 0.5).unwrap();
        let links = f.links_used();
        let r = minimal_reservation(&f, &hose, &links).unwrap();
        // Each of the three involved links carries at most half of min(3, 2).
        for (_, v) in r.iter() {
            assert!((v - 1.0).abs() < TOLERANCE);
        }
        assert!((reservation_cost(&r) - 3.0).abs() < TOLERANCE);
    }
}
