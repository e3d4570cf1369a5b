//! Synchronous message-passing execution of the iteration.
//!
//! Every node is an actor that owns its slice `(y_i, q_i, u_i, z_i)` and an
//! inbox. Actors only see their own problem data, their rows of the mixing
//! matrices and messages from neighbors. Messages are delivered at phase
//! barriers, and sending to or reading from a non-neighbor is a
//! [`Error::LocalityViolation`].
//!
//! Round `r ≥ 1` takes iterate `k = r − 1` to `k + 1`:
//!
//! 1. cross-term exchange: node `j` sends `∂f_j/∂x_i + (∂g_j/∂x_i)ᵀ(q_j + g_j − t_j)`
//!    to every `i ≠ j` in its scope;
//! 2. local direction `d_i` and primal step;
//! 3. `x_i^{k+1}` to every node that reads it;
//! 4. `q_i^{k+1}`, `u_i^{k+1}` from the new `g_i` and the old `u_j^k`;
//! 5. `u_i^{k+1}` to all neighbors;
//! 6. `z_i^{k+1}`.
//!
//! When every scope is a single node, phases 1 and 3 and the setup coupling
//! exchange send nothing.
//!
//! Actors run one after another in ascending id order, so results are
//! reproducible bit for bit.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algorithm::{AlgoParams, AlgoState};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::problem::{LiftedProblem, NodeEval, NodeProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Equality-matrix blocks and read relations.
    Setup,
    /// `x⁰`, `u⁰`.
    XUExchange,
    CrossTerm,
    PostPrimalX,
    PostDualU,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::XUExchange => "x-u-exchange",
            Phase::CrossTerm => "cross-term",
            Phase::PostPrimalX => "post-primal-x",
            Phase::PostDualU => "post-dual-u",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    X(DVector<f64>),
    U(DVector<f64>),
    /// `A_{ji}` from sender `j` to receiver `i`; empty when `i` is outside
    /// `j`'s scope.
    Coupling { a_block: DMatrix<f64>, reads: bool },
    CrossTerm(DVector<f64>),
}

impl Payload {
    pub fn scalars(&self) -> usize {
        match self {
            Payload::X(v) | Payload::U(v) | Payload::CrossTerm(v) => v.len(),
            Payload::Coupling { a_block, .. } => a_block.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    /// Iterate index the payload belongs to.
    pub round: usize,
    pub phase: Phase,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub round: usize,
    pub phase: Phase,
    pub messages: usize,
    pub scalars: usize,
}

/// Message and scalar counts per round and phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunicationAudit {
    pub rows: Vec<AuditRow>,
    pub non_neighbor_accesses: usize,
}

impl CommunicationAudit {
    fn record(&mut self, round: usize, phase: Phase, scalars: usize) {
        match self.rows.last_mut() {
            Some(r) if r.round == round && r.phase == phase => {
                r.messages += 1;
                r.scalars += scalars;
            }
            _ => self.rows.push(AuditRow {
                round,
                phase,
                messages: 1,
                scalars,
            }),
        }
    }

    pub fn messages(&self, round: usize, phase: Phase) -> usize {
        self.rows
            .iter()
            .filter(|r| r.round == round && r.phase == phase)
            .map(|r| r.messages)
            .sum()
    }

    pub fn total_messages(&self, phase: Phase) -> usize {
        self.rows.iter().filter(|r| r.phase == phase).map(|r| r.messages).sum()
    }

    /// Scalars sent in each round `0..=last`.
    pub fn scalars_per_round(&self) -> Vec<usize> {
        let last = self.rows.iter().map(|r| r.round).max().unwrap_or(0);
        let mut out = vec![0; last + 1];
        for r in &self.rows {
            out[r.round] += r.scalars;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,phase,messages,scalars\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.round, r.phase, r.messages, r.scalars));
        }
        s
    }
}

/// Deliberate misbehavior for testing the locality audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// In iteration round `round`, `reader` tries to read `owner`'s `x`.
    ReadNonNeighborX { reader: usize, owner: usize, round: usize },
}

#[derive(Debug, Clone)]
struct Stamped<T> {
    round: usize,
    value: T,
}

/// Messages held by one node. Reads check that the sender is a neighbor and
/// that the entry belongs to the expected iterate.
#[derive(Debug, Clone)]
pub struct NeighborInbox {
    owner: usize,
    neighbors: Vec<usize>,
    x: BTreeMap<usize, Stamped<DVector<f64>>>,
    u: BTreeMap<usize, Stamped<DVector<f64>>>,
    cross: BTreeMap<usize, Stamped<DVector<f64>>>,
    coupling: BTreeMap<usize, (DMatrix<f64>, bool)>,
}

impl NeighborInbox {
    pub fn new(owner: usize, neighbors: Vec<usize>) -> Self {
        NeighborInbox {
            owner,
            neighbors,
            x: BTreeMap::new(),
            u: BTreeMap::new(),
            cross: BTreeMap::new(),
            coupling: BTreeMap::new(),
        }
    }

    fn check_neighbor(&self, j: usize) -> Result<()> {
        if self.neighbors.binary_search(&j).is_err() {
            return Err(Error::LocalityViolation {
                reader: self.owner,
                owner: j,
            });
        }
        Ok(())
    }

    fn get<'a>(
        &self,
        map: &'a BTreeMap<usize, Stamped<DVector<f64>>>,
        j: usize,
        round: usize,
        what: &'static str,
    ) -> Result<&'a DVector<f64>> {
        self.check_neighbor(j)?;
        match map.get(&j) {
            Some(s) if s.round == round => Ok(&s.value),
            _ => Err(Error::MissingNeighborMessage {
                node: self.owner,
                neighbor: j,
                round,
                what,
            }),
        }
    }

    pub fn x(&self, j: usize, round: usize) -> Result<&DVector<f64>> {
        self.get(&self.x, j, round, "x")
    }

    pub fn u(&self, j: usize, round: usize) -> Result<&DVector<f64>> {
        self.get(&self.u, j, round, "u")
    }

    pub fn cross(&self, j: usize, round: usize) -> Result<&DVector<f64>> {
        self.get(&self.cross, j, round, "cross-term")
    }

    fn put(&mut self, msg: Message) {
        let Message {
            from, round, payload, ..
        } = msg;
        match payload {
            Payload::X(v) => {
                self.x.insert(from, Stamped { round, value: v });
            }
            Payload::U(v) => {
                self.u.insert(from, Stamped { round, value: v });
            }
            Payload::CrossTerm(v) => {
                self.cross.insert(from, Stamped { round, value: v });
            }
            Payload::Coupling { a_block, reads } => {
                self.coupling.insert(from, (a_block, reads));
            }
        }
    }

    /// Removes an entry, as if the message had never arrived.
    pub fn drop_u(&mut self, j: usize) {
        self.u.remove(&j);
    }
}

/// One node's private data and state.
#[derive(Debug, Clone)]
struct NodeActor {
    id: usize,
    node: NodeProblem,
    p: usize,
    m: usize,
    /// Nodes other than `id` whose scope contains `id`.
    readers: Vec<usize>,
    pw_row: Vec<(usize, f64)>,
    ph_row: Vec<(usize, f64)>,
    /// `S_i`, assembled from the received `A_{ji}`.
    s: DMatrix<f64>,
    y: DVector<f64>,
    q: DVector<f64>,
    u: DVector<f64>,
    z: DVector<f64>,
    y_sum: DVector<f64>,
    u0: DVector<f64>,
    /// Oracles at the current `x_{scope}`.
    eval: Option<NodeEval>,
    inbox: NeighborInbox,
}

impl NodeActor {
    fn d(&self) -> usize {
        self.node.dim()
    }

    fn x(&self) -> DVector<f64> {
        self.y.rows(0, self.d()).into_owned()
    }

    fn t(&self) -> DVector<f64> {
        self.y.rows(self.d(), self.p).into_owned()
    }

    /// Scope variables at iterate `round`, plus each member's offset and length.
    fn gather_scope(&self, round: usize) -> Result<(DVector<f64>, Vec<(usize, usize)>)> {
        let mut parts = Vec::with_capacity(self.node.scope().len());
        let mut layout = Vec::with_capacity(parts.capacity());
        let mut off = 0;
        for &j in self.node.scope() {
            let xj = self.inbox.x(j, round)?;
            layout.push((off, xj.len()));
            off += xj.len();
            parts.push(xj);
        }
        let mut out = DVector::zeros(off);
        for (xj, &(o, len)) in parts.iter().zip(&layout) {
            out.rows_mut(o, len).copy_from(xj);
        }
        Ok((out, layout))
    }

    fn evaluate(&mut self, round: usize) -> Result<()> {
        let (xs, _) = self.gather_scope(round)?;
        self.eval = Some(self.node.evaluate(self.id, &xs)?);
        Ok(())
    }

    fn eval(&self) -> &NodeEval {
        self.eval.as_ref().expect("evaluated during setup")
    }

    /// `q_i + g_i − t_i`.
    fn constraint_weight(&self) -> DVector<f64> {
        &self.q + &self.eval().g - self.t()
    }

    /// Cross-term contributions of this node to every scope member, in scope order.
    fn cross_terms(&self, round: usize) -> Result<Vec<(usize, DVector<f64>)>> {
        let (_, layout) = self.gather_scope(round)?;
        let ev = self.eval();
        let w = self.constraint_weight();
        Ok(self
            .node
            .scope()
            .iter()
            .zip(layout)
            .map(|(&i, (o, len))| {
                let term = ev.grad_f.rows(o, len) + ev.jac_g.columns(o, len).transpose() * &w;
                (i, term)
            })
            .collect())
    }

    /// `Σ_j [P^W]_ij u_j` over the stored `u^round`.
    fn mix_w(&self, round: usize) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.u.len());
        for &(j, w) in &self.pw_row {
            acc.axpy(w, self.inbox.u(j, round)?, 1.0);
        }
        Ok(acc)
    }

    fn mix_h(&self, round: usize) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.u.len());
        for &(j, w) in &self.ph_row {
            acc.axpy(w, self.inbox.u(j, round)?, 1.0);
        }
        Ok(acc)
    }

    /// `B_i y_i − c_i`.
    fn local_residual(&self) -> DVector<f64> {
        let mut r = DVector::zeros(self.m + self.p);
        r.rows_mut(0, self.m)
            .copy_from(&(&self.s * self.x() - self.node.b()));
        r.rows_mut(self.m, self.p).copy_from(&self.t());
        r
    }

    /// `B_iᵀ v` for `v ∈ R^{m+p}`.
    fn apply_bt(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.d() + self.p);
        out.rows_mut(0, self.d())
            .copy_from(&(self.s.transpose() * v.rows(0, self.m)));
        out.rows_mut(self.d(), self.p).copy_from(&v.rows(self.m, self.p));
        out
    }

    /// `d_i^k` from the inbox at iterate `k`.
    fn direction(&self, k: usize, rho: f64) -> Result<DVector<f64>> {
        let (d, p) = (self.d(), self.p);
        let mut senders: Vec<usize> = self.readers.clone();
        senders.push(self.id);
        senders.sort_unstable();
        let mut tilde1 = DVector::zeros(d);
        for j in senders {
            tilde1 += self.inbox.cross(j, k)?;
        }
        tilde1 += self.s.transpose() * (&self.s * self.x() - self.node.b()) / rho;
        let tilde2 = self.t() / rho - self.constraint_weight();
        let dual = self.mix_w(k)? - &self.z / rho;
        let mut dir = self.apply_bt(&dual);
        let mut head = dir.rows_mut(0, d);
        head += tilde1;
        let mut tail = dir.rows_mut(d, p);
        tail += tilde2;
        Ok(dir)
    }

    fn project(&mut self) {
        for k in 0..self.d() {
            self.y[k] = self.y[k].clamp(self.node.lower()[k], self.node.upper()[k]);
        }
    }
}

/// The network of actors.
pub struct Simulator {
    graph: Graph,
    actors: Vec<NodeActor>,
    gamma: f64,
    rho: f64,
    /// Number of completed iteration rounds, i.e. the current iterate index.
    k: usize,
    decoupled: bool,
    pending: Vec<Message>,
    audit: CommunicationAudit,
    record_audit: bool,
    fault: Option<Fault>,
    y_offsets: Vec<usize>,
}

impl Simulator {
    /// Distributes the initial state and runs the setup round.
    pub fn new(lp: &LiftedProblem, params: &AlgoParams, initial: &AlgoState, record_audit: bool) -> Result<Self> {
        let prob = lp.problem();
        let (n, p, m) = (lp.n(), lp.p(), lp.m());
        let ub = lp.u_block();
        let actors = (0..n)
            .map(|i| {
                let y = initial.y.rows(lp.y_offset(i), lp.y_block_len(i)).into_owned();
                let u = initial.u.rows(i * ub, ub).into_owned();
                NodeActor {
                    id: i,
                    node: prob.node(i).clone(),
                    p,
                    m,
                    readers: Vec::new(),
                    pw_row: params.wp.pw_row(i).to_vec(),
                    ph_row: params.wp.ph_row(i).to_vec(),
                    s: DMatrix::zeros(m, prob.dim(i)),
                    q: DVector::zeros(p),
                    z: DVector::zeros(ub),
                    y_sum: DVector::zeros(y.len()),
                    y,
                    u0: u.clone(),
                    u,
                    eval: None,
                    inbox: NeighborInbox::new(i, prob.graph().neighbors(i).to_vec()),
                }
            })
            .collect();
        let mut sim = Simulator {
            graph: prob.graph().clone(),
            actors,
            gamma: params.gamma,
            rho: params.rho,
            k: 0,
            decoupled: prob.is_decoupled(),
            pending: Vec::new(),
            audit: CommunicationAudit::default(),
            record_audit,
            fault: None,
            y_offsets: (0..=n).map(|i| if i < n { lp.y_offset(i) } else { lp.dim() }).collect(),
        };
        sim.setup()?;
        Ok(sim)
    }

    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn audit(&self) -> &CommunicationAudit {
        &self.audit
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Mutable inbox access, for failure-injection tests.
    pub fn inbox_mut(&mut self, i: usize) -> &mut NeighborInbox {
        &mut self.actors[i].inbox
    }

    fn send(&mut self, msg: Message, audit_round: usize) -> Result<()> {
        if msg.from == msg.to {
            // self entries never cross the network
            let to = msg.to;
            self.actors[to].inbox.put(msg);
            return Ok(());
        }
        if !self.graph.are_neighbors(msg.from, msg.to) {
            self.audit.non_neighbor_accesses += 1;
            return Err(Error::LocalityViolation {
                reader: msg.to,
                owner: msg.from,
            });
        }
        if self.record_audit {
            self.audit.record(audit_round, msg.phase, msg.payload.scalars());
        }
        self.pending.push(msg);
        Ok(())
    }

    /// Phase barrier: delivers everything sent since the previous one.
    fn deliver(&mut self) {
        for msg in std::mem::take(&mut self.pending) {
            let to = msg.to;
            self.actors[to].inbox.put(msg);
        }
    }

    fn note_violation<T>(&mut self, r: Result<T>) -> Result<T> {
        if let Err(Error::LocalityViolation { .. }) = &r {
            self.audit.non_neighbor_accesses += 1;
        }
        r
    }

    fn broadcast_x(&mut self, i: usize, round: usize, audit_round: usize, phase: Phase) -> Result<()> {
        let x = self.actors[i].x();
        let mut targets = self.actors[i].readers.clone();
        targets.push(i);
        for to in targets {
            self.send(
                Message {
                    from: i,
                    to,
                    round,
                    phase,
                    payload: Payload::X(x.clone()),
                },
                audit_round,
            )?;
        }
        Ok(())
    }

    fn broadcast_u(&mut self, i: usize, round: usize, audit_round: usize, phase: Phase) -> Result<()> {
        let u = self.actors[i].u.clone();
        let targets = self.graph.neighbors(i).to_vec();
        for to in targets {
            self.send(
                Message {
                    from: i,
                    to,
                    round,
                    phase,
                    payload: Payload::U(u.clone()),
                },
                audit_round,
            )?;
        }
        Ok(())
    }

    /// Round 0: `x⁰` and `u⁰` to all neighbors, then the coupling blocks
    /// `A_{ji}` (column offsets follow from the received `x⁰` lengths).
    fn setup(&mut self) -> Result<()> {
        let n = self.actors.len();
        for i in 0..n {
            let x = self.actors[i].x();
            let targets = if self.decoupled { vec![i] } else { self.graph.neighbors(i).to_vec() };
            for to in targets {
                self.send(
                    Message {
                        from: i,
                        to,
                        round: 0,
                        phase: Phase::XUExchange,
                        payload: Payload::X(x.clone()),
                    },
                    0,
                )?;
            }
            self.broadcast_u(i, 0, 0, Phase::XUExchange)?;
        }
        self.deliver();
        if !self.decoupled {
            for j in 0..n {
                let layout = {
                    let res = self.actors[j].gather_scope(0).map(|(_, l)| l);
                    self.note_violation(res)?
                };
                for i in self.graph.neighbors(j).to_vec() {
                    if i == j {
                        continue;
                    }
                    let nd = &self.actors[j].node;
                    let (a_block, reads) = match nd.scope().iter().position(|&s| s == i) {
                        Some(pos) => {
                            let (off, len) = layout[pos];
                            (nd.a().columns(off, len).into_owned(), true)
                        }
                        None => (DMatrix::zeros(0, 0), false),
                    };
                    self.send(
                        Message {
                            from: j,
                            to: i,
                            round: 0,
                            phase: Phase::Setup,
                            payload: Payload::Coupling { a_block, reads },
                        },
                        0,
                    )?;
                }
            }
            self.deliver();
        }
        let rho = self.rho;
        for i in 0..n {
            let layout = {
                let res = self.actors[i].gather_scope(0).map(|(_, l)| l);
                self.note_violation(res)?
            };
            let a = &mut self.actors[i];
            let own_pos = a.node.scope().iter().position(|&s| s == a.id).expect("scope has self");
            // S_i = Σ_j A_{ji} in ascending j, own block included
            let mut s = DMatrix::zeros(a.m, a.d());
            let mut readers = Vec::new();
            for &j in &a.inbox.neighbors {
                if j == a.id {
                    s += a.node.a().columns(layout[own_pos].0, a.d());
                } else if let Some((blk, true)) = a.inbox.coupling.get(&j) {
                    s += blk;
                    readers.push(j);
                }
            }
            a.s = s;
            a.readers = readers;
            let r = a.evaluate(0);
            self.note_violation(r)?;
            let a = &mut self.actors[i];
            let g = &a.eval().g - a.t();
            a.q = g.map(|v| (-v).max(0.0));
            a.z = a.mix_h(0)? * rho;
        }
        Ok(())
    }

    /// One synchronous iteration round.
    pub fn round(&mut self) -> Result<()> {
        let n = self.actors.len();
        let k = self.k;
        let r = k + 1;
        let (gamma, rho) = (self.gamma, self.rho);

        // 1. cross terms at x^k
        for j in 0..n {
            if let Some(Fault::ReadNonNeighborX { reader, owner, round }) = self.fault {
                if reader == j && round == r {
                    let res = self.actors[j].inbox.x(owner, k).map(|_| ());
                    self.note_violation(res)?;
                }
            }
            let terms = {
                let res = self.actors[j].cross_terms(k);
                self.note_violation(res)?
            };
            for (i, term) in terms {
                self.send(
                    Message {
                        from: j,
                        to: i,
                        round: k,
                        phase: Phase::CrossTerm,
                        payload: Payload::CrossTerm(term),
                    },
                    r,
                )?;
            }
        }
        self.deliver();

        // 2. primal step
        for i in 0..n {
            let dir = {
                let res = self.actors[i].direction(k, rho);
                self.note_violation(res)?
            };
            let a = &mut self.actors[i];
            a.y -= dir * gamma;
            a.project();
        }

        // 3. x^{k+1}
        for i in 0..n {
            if self.decoupled {
                let x = self.actors[i].x();
                self.actors[i].inbox.put(Message {
                    from: i,
                    to: i,
                    round: k + 1,
                    phase: Phase::PostPrimalX,
                    payload: Payload::X(x),
                });
            } else {
                self.broadcast_x(i, k + 1, r, Phase::PostPrimalX)?;
            }
        }
        self.deliver();

        // 4. q^{k+1}, u^{k+1}
        let mut new_u = Vec::with_capacity(n);
        for i in 0..n {
            let res = self.actors[i].evaluate(k + 1);
            self.note_violation(res)?;
            let a = &self.actors[i];
            let g = &a.eval().g - a.t();
            let q = DVector::from_fn(g.len(), |l, _| (-g[l]).max(a.q[l] + g[l]));
            let u = a.mix_w(k)? + (a.local_residual() - &a.z) / rho;
            new_u.push((q, u));
        }
        for (a, (q, u)) in self.actors.iter_mut().zip(new_u) {
            a.q = q;
            a.u = u;
            a.y_sum += &a.y;
        }

        // 5. u^{k+1}
        for i in 0..n {
            self.broadcast_u(i, k + 1, r, Phase::PostDualU)?;
        }
        self.deliver();

        // 6. z^{k+1}
        for i in 0..n {
            let h = {
                let res = self.actors[i].mix_h(k + 1);
                self.note_violation(res)?
            };
            self.actors[i].z += h * rho;
        }
        self.k += 1;
        Ok(())
    }

    /// Concatenation of all actor slices.
    pub fn global_state(&self) -> AlgoState {
        let n = self.actors.len();
        let dim = self.y_offsets[n];
        let ub = self.actors.first().map_or(0, |a| a.u.len());
        let p = self.actors.first().map_or(0, |a| a.p);
        let mut s = AlgoState {
            k: self.k,
            y: DVector::zeros(dim),
            q: DVector::zeros(n * p),
            u: DVector::zeros(n * ub),
            z: DVector::zeros(n * ub),
            y_sum: DVector::zeros(dim),
            u0: DVector::zeros(n * ub),
        };
        for (i, a) in self.actors.iter().enumerate() {
            let (off, len) = (self.y_offsets[i], a.y.len());
            s.y.rows_mut(off, len).copy_from(&a.y);
            s.y_sum.rows_mut(off, len).copy_from(&a.y_sum);
            s.q.rows_mut(i * p, p).copy_from(&a.q);
            s.u.rows_mut(i * ub, ub).copy_from(&a.u);
            s.z.rows_mut(i * ub, ub).copy_from(&a.z);
            s.u0.rows_mut(i * ub, ub).copy_from(&a.u0);
        }
        s
    }
}
