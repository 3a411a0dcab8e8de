//! In-process rank grid: mailboxes standing in for point-to-point messages,
//! plus drivers that run a decomposed operator evaluation.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::Serialize;

use mrhs_core::dirac::{DiracParams, HaloExchange, WilsonDirac};
use mrhs_core::exec::Serial;
use mrhs_core::field::{BlockField, SPINOR};
use mrhs_core::gauge::{CloverField, GaugeField};
use mrhs_core::geometry::{decompose, Decomposition, Direction, RankGrid};
use mrhs_core::{Error as CoreError, Result as CoreResult, C64};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Channel {
    dst: usize,
    mu: usize,
    dir: Direction,
    epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloMessage {
    pub src_rank: usize,
    pub dst_rank: usize,
    pub mu: usize,
    pub dir: Direction,
    pub payload: Vec<C64>,
}

#[derive(Debug, Default)]
struct Mailroom {
    slots: HashMap<Channel, HaloMessage>,
    seen: HashSet<Channel>,
    posted: HashMap<u64, u64>,
    consumed: HashMap<u64, u64>,
}

/// Shared mailboxes for every rank of one grid.
#[derive(Debug)]
pub struct Hub {
    grid: RankGrid,
    timeout: Duration,
    room: Mutex<Mailroom>,
    ready: Condvar,
}

/// Message counts of one closed epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EpochAudit {
    pub epoch: u64,
    pub posted: u64,
    pub consumed: u64,
}

impl Hub {
    pub fn new(grid: RankGrid, timeout: Duration) -> Arc<Self> {
        Arc::new(Self {
            grid,
            timeout,
            room: Mutex::new(Mailroom::default()),
            ready: Condvar::new(),
        })
    }

    pub fn grid(&self) -> &RankGrid {
        &self.grid
    }

    pub fn endpoint(self: &Arc<Self>, rank: usize) -> RankComm {
        RankComm {
            hub: Arc::clone(self),
            rank,
            epoch: 0,
            wait: Duration::ZERO,
            started: Instant::now(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Mailroom> {
        self.room.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Checks that every message of `epoch` was consumed exactly once and
    /// that each rank posted one message per channel.
    pub fn audit_epoch(&self, epoch: u64) -> CoreResult<EpochAudit> {
        let mut room = self.lock();
        let posted = room.posted.remove(&epoch).unwrap_or(0);
        let consumed = room.consumed.remove(&epoch).unwrap_or(0);
        let pending: Vec<Channel> = room.slots.keys().filter(|c| c.epoch == epoch).copied().collect();
        room.seen.retain(|c| c.epoch != epoch);
        if !pending.is_empty() {
            return Err(CoreError::Comm(format!(
                "epoch {epoch}: {} message(s) never received, first for rank {} mu={} dir={}",
                pending.len(),
                pending[0].dst,
                pending[0].mu,
                pending[0].dir
            )));
        }
        let expected = (self.grid.n_ranks() * 8) as u64;
        if posted != expected || consumed != expected {
            return Err(CoreError::Comm(format!(
                "epoch {epoch}: posted {posted}, consumed {consumed}, expected {expected}"
            )));
        }
        Ok(EpochAudit {
            epoch,
            posted,
            consumed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommStats {
    pub epoch: u64,
    pub rank: usize,
    pub wait_seconds: f64,
    pub compute_seconds: f64,
}

/// One rank's view of the hub.
#[derive(Debug)]
pub struct RankComm {
    hub: Arc<Hub>,
    rank: usize,
    epoch: u64,
    wait: Duration,
    started: Instant,
}

impl RankComm {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Resets the timers for a new exchange.
    pub fn begin_epoch(&mut self) {
        self.wait = Duration::ZERO;
        self.started = Instant::now();
    }

    /// Closes the current epoch and returns its timing.
    pub fn end_epoch(&mut self) -> CommStats {
        let total = self.started.elapsed();
        let stats = CommStats {
            epoch: self.epoch,
            rank: self.rank,
            wait_seconds: self.wait.as_secs_f64(),
            compute_seconds: total.saturating_sub(self.wait).as_secs_f64(),
        };
        self.epoch += 1;
        self.begin_epoch();
        stats
    }
}

impl HaloExchange for RankComm {
    fn post_send(&mut self, mu: usize, dir: Direction, payload: Vec<C64>) -> CoreResult<()> {
        let dst = self.hub.grid.neighbor_rank(self.rank, mu, dir);
        let ch = Channel {
            dst,
            mu,
            dir,
            epoch: self.epoch,
        };
        let mut room = self.hub.lock();
        if !room.seen.insert(ch) {
            return Err(CoreError::Comm(format!(
                "rank {} posted mu={mu} dir={dir} twice in epoch {}",
                self.rank, self.epoch
            )));
        }
        room.slots.insert(
            ch,
            HaloMessage {
                src_rank: self.rank,
                dst_rank: dst,
                mu,
                dir,
                payload,
            },
        );
        *room.posted.entry(self.epoch).or_default() += 1;
        drop(room);
        self.hub.ready.notify_all();
        Ok(())
    }

    fn complete_recv(&mut self, mu: usize, dir: Direction) -> CoreResult<Vec<C64>> {
        let ch = Channel {
            dst: self.rank,
            mu,
            dir,
            epoch: self.epoch,
        };
        let start = Instant::now();
        let deadline = start + self.hub.timeout;
        let mut room = self.hub.lock();
        let msg = loop {
            if let Some(m) = room.slots.remove(&ch) {
                break m;
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(CoreError::Comm(format!(
                    "rank {} timed out after {:?} waiting for mu={mu} dir={dir} (epoch {})",
                    self.rank, self.hub.timeout, self.epoch
                )));
            }
            room = self
                .hub
                .ready
                .wait_timeout(room, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        };
        *room.consumed.entry(self.epoch).or_default() += 1;
        drop(room);
        self.wait += start.elapsed();
        Ok(msg.payload)
    }
}

/// Gauge and clover fields cut into per-rank pieces.
#[derive(Debug, Clone)]
pub struct DecomposedProblem {
    pub decomposition: Decomposition,
    pub gauges: Vec<GaugeField>,
    pub clovers: Vec<CloverField>,
    n_sites: usize,
}

impl DecomposedProblem {
    pub fn new(gauge: &GaugeField, clover: &CloverField, grid: [usize; 4]) -> CoreResult<Self> {
        let geom = gauge.geometry();
        let decomposition = decompose(geom, grid)?;
        let mut gauges = Vec::new();
        let mut clovers = Vec::new();
        for r in &decomposition.ranks {
            gauges.push(gauge.restrict(&r.local, &r.global_sites)?);
            clovers.push(clover.restrict(&r.local, &r.global_sites)?);
        }
        Ok(Self {
            decomposition,
            gauges,
            clovers,
            n_sites: geom.n_sites(),
        })
    }

    pub fn n_ranks(&self) -> usize {
        self.decomposition.ranks.len()
    }

    pub fn scatter(&self, psi: &BlockField) -> Vec<BlockField> {
        self.decomposition
            .ranks
            .iter()
            .map(|r| {
                let mut local = BlockField::zeros(r.global_sites.len(), psi.components(), psi.policy());
                for (l, &g) in r.global_sites.iter().enumerate() {
                    local.site_block_mut(l).copy_from_slice(psi.site_block(g));
                }
                local
            })
            .collect()
    }

    pub fn gather(&self, parts: &[BlockField]) -> BlockField {
        let first = &parts[0];
        let mut out = BlockField::zeros(self.n_sites, first.components(), first.policy());
        for (r, part) in self.decomposition.ranks.iter().zip(parts) {
            for (l, &g) in r.global_sites.iter().enumerate() {
                out.site_block_mut(g).copy_from_slice(part.site_block(l));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankExecution {
    /// All ranks post, then all ranks receive, on the calling thread.
    Sequential,
    /// One thread per rank.
    Concurrent,
}

#[derive(Debug, Clone)]
pub struct DecomposedApply {
    pub eta: BlockField,
    pub stats: Vec<CommStats>,
    pub audit: EpochAudit,
}

/// `eta = D psi` evaluated rank by rank with halo exchange.
pub fn apply_decomposed(
    params: DiracParams,
    problem: &DecomposedProblem,
    psi: &BlockField,
    mode: RankExecution,
    timeout: Duration,
) -> CoreResult<DecomposedApply> {
    if psi.n_sites() != problem.n_sites || psi.components() != SPINOR {
        return Err(CoreError::ShapeMismatch(format!(
            "field has {} sites, lattice {}",
            psi.n_sites(),
            problem.n_sites
        )));
    }
    let hub = Hub::new(problem.decomposition.grid, timeout);
    let diracs = problem
        .gauges
        .iter()
        .zip(&problem.clovers)
        .map(|(u, c)| WilsonDirac::new(params, u, c))
        .collect::<CoreResult<Vec<_>>>()?;
    let inputs = problem.scatter(psi);
    let n = problem.n_ranks();
    let mut outputs: Vec<BlockField> = inputs
        .iter()
        .map(|p| BlockField::zeros(p.n_sites(), SPINOR, p.policy()))
        .collect();
    let mut comms: Vec<RankComm> = (0..n).map(|r| hub.endpoint(r)).collect();
    let mut stats = Vec::with_capacity(n);
    match mode {
        RankExecution::Sequential => {
            let mut workspaces: Vec<_> = diracs.iter().map(|d| d.workspace(psi.policy())).collect();
            for r in 0..n {
                comms[r].begin_epoch();
                diracs[r].begin_exchange(&inputs[r], &mut outputs[r], &mut workspaces[r], &mut comms[r], &Serial)?;
            }
            for r in 0..n {
                diracs[r].finish_exchange(&mut outputs[r], &mut workspaces[r], &mut comms[r], &Serial)?;
                stats.push(comms[r].end_epoch());
            }
        }
        RankExecution::Concurrent => {
            let results: Vec<CoreResult<CommStats>> = std::thread::scope(|s| {
                let handles: Vec<_> = diracs
                    .iter()
                    .zip(&inputs)
                    .zip(outputs.iter_mut())
                    .zip(comms.iter_mut())
                    .map(|(((d, p), e), c)| {
                        s.spawn(move || {
                            let mut ws = d.workspace(p.policy());
                            c.begin_epoch();
                            d.apply_exchange(p, e, &mut ws, c, &Serial)?;
                            Ok(c.end_epoch())
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(CoreError::Comm("rank thread panicked".into()))))
                    .collect()
            });
            for r in results {
                stats.push(r?);
            }
        }
    }
    let audit = hub.audit_epoch(0)?;
    Ok(DecomposedApply {
        eta: problem.gather(&outputs),
        stats,
        audit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrhs_core::geometry::LatticeGeometry;

    fn grid(dims: [usize; 4], g: [usize; 4]) -> RankGrid {
        RankGrid::new(&LatticeGeometry::new(dims).unwrap(), g).unwrap()
    }

    fn payload(n: usize, tag: f64) -> Vec<C64> {
        (0..n).map(|k| C64::new(tag, k as f64)).collect()
    }

    #[test]
    fn single_rank_loopback() {
        let hub = Hub::new(grid([4, 4, 4, 4], [1, 1, 1, 1]), DEFAULT_TIMEOUT);
        let mut c = hub.endpoint(0);
        c.post_send(2, Direction::Forward, payload(5, 1.0)).unwrap();
        assert_eq!(c.complete_recv(2, Direction::Forward).unwrap(), payload(5, 1.0));
    }

    #[test]
    fn two_rank_delivery_is_exact() {
        let hub = Hub::new(grid([8, 4, 4, 4], [2, 1, 1, 1]), DEFAULT_TIMEOUT);
        let mut r0 = hub.endpoint(0);
        let mut r1 = hub.endpoint(1);
        let p = payload(7, 0.25);
        r0.post_send(0, Direction::Backward, p.clone()).unwrap();
        let got = r1.complete_recv(0, Direction::Backward).unwrap();
        let bytes = |v: &[C64]| v.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect::<Vec<_>>();
        assert_eq!(bytes(&got), bytes(&p));
    }

    #[test]
    fn duplicate_post_rejected() {
        let hub = Hub::new(grid([4, 4, 4, 4], [1, 1, 1, 1]), DEFAULT_TIMEOUT);
        let mut c = hub.endpoint(0);
        c.post_send(1, Direction::Backward, payload(1, 0.0)).unwrap();
        assert!(c.post_send(1, Direction::Backward, payload(1, 0.0)).is_err());
    }

    #[test]
    fn receive_waits_for_later_post() {
        let hub = Hub::new(grid([8, 4, 4, 4], [2, 1, 1, 1]), DEFAULT_TIMEOUT);
        let mut r0 = hub.endpoint(0);
        let mut r1 = hub.endpoint(1);
        let got = std::thread::scope(|s| {
            let h = s.spawn(move || r1.complete_recv(0, Direction::Forward));
            std::thread::sleep(Duration::from_millis(20));
            r0.post_send(0, Direction::Forward, payload(3, 9.0)).unwrap();
            h.join().unwrap()
        });
        assert_eq!(got.unwrap(), payload(3, 9.0));
    }

    #[test]
    fn missing_message_times_out_with_name() {
        let hub = Hub::new(grid([8, 4, 4, 4], [2, 1, 1, 1]), Duration::from_millis(30));
        let mut r1 = hub.endpoint(1);
        let err = r1.complete_recv(3, Direction::Backward).unwrap_err().to_string();
        assert!(err.contains("rank 1") && err.contains("mu=3") && err.contains("dir=-"), "{err}");
    }

    #[test]
    fn single_rank_stats_have_no_wait() {
        let hub = Hub::new(grid([4, 4, 4, 4], [1, 1, 1, 1]), DEFAULT_TIMEOUT);
        let mut c = hub.endpoint(0);
        c.begin_epoch();
        let s = c.end_epoch();
        assert_eq!(s.wait_seconds, 0.0);
        assert_eq!(s.epoch, 0);
        assert_eq!(c.epoch(), 1);
    }
}
