//! One replication of the two-layer platform.
//!
//! Host groups hold a FIFO container queue, a single instantiation unit
//! and up to `S` VMs with `M` container slots each. VM requests go
//! through a global queue, a two-attempt lookup, a per-PM queue and the
//! PM's hypervisor before the VM is deployed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Arrival(usize),
    Instantiated(usize, u64),
    ContainerDone(usize, u64),
    Release(usize, u64),
    ExternalRequest,
    LookupDone(u8),
    Provisioned(usize),
    ExternalExpiry(usize),
}

#[derive(Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: the heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    External,
    User(usize),
}

#[derive(Debug, Clone, Copy)]
struct VmRequest {
    owner: Owner,
    arrived: f64,
    left_queue: f64,
    started: f64,
}

#[derive(Debug, Default)]
struct Pm {
    queue: VecDeque<VmRequest>,
    busy: Option<VmRequest>,
    deployed: usize,
}

impl Pm {
    fn occupancy(&self) -> usize {
        self.queue.len() + self.busy.is_some() as usize + self.deployed
    }
}

#[derive(Debug, Clone, Copy)]
struct Vm {
    id: u64,
    running: usize,
    pm: usize,
}

#[derive(Debug, Clone, Copy)]
struct Request {
    arrived: f64,
    started: Option<f64>,
}

/// Exponential timer that can be cancelled by bumping its generation.
#[derive(Debug, Default)]
struct Timer {
    generation: u64,
    armed: bool,
}

#[derive(Debug, Default)]
struct HostGroup {
    vms: Vec<Vm>,
    /// Running container id to the VM hosting it.
    placement: BTreeMap<u64, u64>,
    queue: VecDeque<Request>,
    running: usize,
    instantiation: Timer,
    release: Timer,
    pending_vm: bool,
}

impl HostGroup {
    fn k(&self) -> usize {
        self.vms.len()
    }
}

/// Sums and counts accumulated after warm-up.
#[derive(Debug, Default, Clone)]
pub(crate) struct Tally {
    // time integrals summed over users
    pub queued: f64,
    pub running: f64,
    pub vms: f64,
    pub util: f64,
    pub observed: f64,

    pub arrivals: u64,
    pub rejected: u64,
    pub admitted: u64,
    pub immediate: u64,
    pub waits: f64,
    pub waits_n: u64,

    pub vm_arrivals: u64,
    pub vm_full_queue: u64,
    pub vm_no_capacity: u64,
    pub vm_immediate: u64,
    pub lookups: u64,
    pub lookup_hits: u64,
    pub vm_total: f64,
    pub vm_queue: f64,
    pub vm_pm_wait: f64,
    pub vm_provision: f64,
    pub vm_done: u64,
}

/// Whole-run bookkeeping used for conservation checks.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Conservation {
    pub containers_admitted: u64,
    pub containers_completed: u64,
    pub containers_queued: u64,
    pub containers_running: u64,
    pub vm_requests_admitted: u64,
    pub vm_requests_rejected_after_admission: u64,
    pub vms_provisioned: u64,
    pub vm_requests_in_flight: u64,
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub(crate) tally: Tally,
    pub conservation: Conservation,
    pub capacity_violations: u64,
    pub events: u64,
    pub digest: u64,
}

pub(crate) struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    warm: f64,
    groups: Vec<HostGroup>,
    pms: Vec<Pm>,
    global: VecDeque<VmRequest>,
    lookup_busy: bool,
    next_vm: u64,
    next_container: u64,
    acquisition_sum: f64,
    acquisition_n: u64,
    tally: Tally,
    cons: Conservation,
    violations: u64,
    events: u64,
    digest: DefaultHasher,
}

impl<'a> Sim<'a> {
    pub(crate) fn new(cfg: &'a SimConfig, rng: ChaCha8Rng) -> Self {
        let sys = &cfg.system;
        let mut sim = Sim {
            cfg,
            rng,
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            warm: cfg.warmup * cfg.horizon,
            groups: (0..sys.micro.users).map(|_| HostGroup::default()).collect(),
            pms: (0..sys.infra.pool_size).map(|_| Pm::default()).collect(),
            global: VecDeque::new(),
            lookup_busy: false,
            next_vm: 0,
            next_container: 0,
            acquisition_sum: 0.0,
            acquisition_n: 0,
            tally: Tally::default(),
            cons: Conservation::default(),
            violations: 0,
            events: 0,
            digest: DefaultHasher::new(),
        };
        // Minimum host groups are placed round-robin before time zero.
        let mut slot = 0;
        for u in 0..sys.micro.users {
            for _ in 0..sys.micro.min_vms {
                let pm = slot % sys.infra.pool_size;
                slot += 1;
                sim.pms[pm].deployed += 1;
                let id = sim.fresh_vm_id();
                sim.groups[u].vms.push(Vm { id, running: 0, pm });
            }
        }
        for u in 0..sys.micro.users {
            sim.schedule_in(sys.micro.arrival_rate, Kind::Arrival(u));
        }
        sim.schedule_in(sys.infra.arrival_rate, Kind::ExternalRequest);
        for u in 0..sys.micro.users {
            sim.refresh(u);
        }
        sim
    }

    fn fresh_vm_id(&mut self) -> u64 {
        self.next_vm += 1;
        self.next_vm
    }

    fn exp(&mut self, rate: f64) -> f64 {
        let e: f64 = self.rng.sample(Exp1);
        e / rate
    }

    /// Schedules `kind` after an exponential delay; a zero rate never fires.
    fn schedule_in(&mut self, rate: f64, kind: Kind) {
        if rate > 0.0 {
            let t = self.now + self.exp(rate);
            self.push(t, kind);
        }
    }

    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn after_warmup(&self, t: f64) -> bool {
        t >= self.warm
    }

    pub(crate) fn run(mut self) -> Replication {
        let horizon = self.cfg.horizon;
        while let Some(ev) = self.heap.pop() {
            if ev.time > horizon {
                break;
            }
            self.advance(ev.time);
            self.events += 1;
            ev.time.to_bits().hash(&mut self.digest);
            ev.kind.hash(&mut self.digest);
            self.handle(ev.kind);
            if self.cfg.audit {
                self.audit();
            }
        }
        self.advance(horizon);
        let mut cons = self.cons;
        cons.containers_queued = self.groups.iter().map(|g| g.queue.len() as u64).sum();
        cons.containers_running = self.groups.iter().map(|g| g.running as u64).sum();
        cons.vm_requests_in_flight = self.global.len() as u64
            + self
                .pms
                .iter()
                .map(|p| (p.queue.len() + p.busy.is_some() as usize) as u64)
                .sum::<u64>();
        Replication {
            tally: self.tally,
            conservation: cons,
            capacity_violations: self.violations,
            events: self.events,
            digest: self.digest.finish(),
        }
    }

    /// Integrates the host-group state over `[now, t]`.
    fn advance(&mut self, t: f64) {
        let from = self.now.max(self.warm);
        if t > from {
            let dt = t - from;
            let m = self.cfg.system.micro.containers_per_vm;
            for g in &self.groups {
                let i = g.queue.len() as f64;
                let j = g.running as f64;
                let k = g.k() as f64;
                self.tally.queued += i * dt;
                self.tally.running += j * dt;
                self.tally.vms += k * dt;
                self.tally.util += (i + j) / (k * m as f64) * dt;
            }
            self.tally.observed += dt;
        }
        self.now = t;
    }

    fn handle(&mut self, kind: Kind) {
        match kind {
            Kind::Arrival(u) => self.on_arrival(u),
            Kind::Instantiated(u, g) => {
                if self.groups[u].instantiation.armed && self.groups[u].instantiation.generation == g {
                    self.on_instantiated(u);
                }
            }
            Kind::ContainerDone(u, id) => self.on_container_done(u, id),
            Kind::Release(u, g) => {
                if self.groups[u].release.armed && self.groups[u].release.generation == g {
                    self.on_release(u);
                }
            }
            Kind::ExternalRequest => {
                let rate = self.cfg.system.infra.arrival_rate;
                self.schedule_in(rate, Kind::ExternalRequest);
                self.submit(Owner::External);
            }
            Kind::LookupDone(attempt) => self.on_lookup(attempt),
            Kind::Provisioned(pm) => self.on_provisioned(pm),
            Kind::ExternalExpiry(pm) => self.pms[pm].deployed -= 1,
        }
    }

    fn on_arrival(&mut self, u: usize) {
        let micro = &self.cfg.system.micro;
        let cap = micro.max_vms * micro.containers_per_vm;
        let rate = micro.arrival_rate;
        self.schedule_in(rate, Kind::Arrival(u));
        let counted = self.after_warmup(self.now);
        let g = &mut self.groups[u];
        if counted {
            self.tally.arrivals += 1;
        }
        if g.queue.len() + g.running < cap {
            g.queue.push_back(Request {
                arrived: self.now,
                started: None,
            });
            self.cons.containers_admitted += 1;
            if counted {
                self.tally.admitted += 1;
            }
        } else if counted {
            self.tally.rejected += 1;
        }
        self.refresh(u);
    }

    fn on_instantiated(&mut self, u: usize) {
        let m = self.cfg.system.micro.containers_per_vm;
        let mu = self.cfg.system.micro.completion_rate;
        let now = self.now;
        let g = &mut self.groups[u];
        g.instantiation.armed = false;
        let req = g.queue.pop_front().expect("instantiation without a queued request");
        // Binpack: fullest VM that still has a free slot.
        let vm = g
            .vms
            .iter_mut()
            .filter(|v| v.running < m)
            .max_by(|a, b| a.running.cmp(&b.running).then(b.id.cmp(&a.id)))
            .expect("instantiation without a free slot");
        vm.running += 1;
        let vm_id = vm.id;
        g.running += 1;
        self.next_container += 1;
        let id = self.next_container;
        g.placement.insert(id, vm_id);
        if req.arrived >= self.warm {
            self.tally.waits += now - req.arrived;
            self.tally.waits_n += 1;
        }
        self.schedule_in(mu, Kind::ContainerDone(u, id));
        self.refresh(u);
    }

    fn on_container_done(&mut self, u: usize, id: u64) {
        let g = &mut self.groups[u];
        let vm_id = g.placement.remove(&id).expect("unknown container");
        let vm = g
            .vms
            .iter_mut()
            .find(|v| v.id == vm_id)
            .expect("container finished on a released VM");
        vm.running -= 1;
        g.running -= 1;
        self.cons.containers_completed += 1;
        self.refresh(u);
    }

    fn on_release(&mut self, u: usize) {
        let m = self.cfg.system.micro.containers_per_vm;
        let g = &mut self.groups[u];
        g.release.armed = false;
        let fewest = g.vms.iter().map(|v| v.running).min().unwrap_or(0);
        let idx = g
            .vms
            .iter()
            .rposition(|v| v.running == fewest)
            .expect("release with no VM");
        let vm = g.vms.remove(idx);
        // Drain the victim into the remaining VMs, fullest first.
        let moving: Vec<u64> = g
            .placement
            .iter()
            .filter(|(_, &v)| v == vm.id)
            .map(|(&c, _)| c)
            .collect();
        for c in moving {
            let target = g
                .vms
                .iter_mut()
                .filter(|v| v.running < m)
                .max_by(|a, b| a.running.cmp(&b.running).then(b.id.cmp(&a.id)))
                .expect("no room to consolidate");
            target.running += 1;
            g.placement.insert(c, target.id);
        }
        self.pms[vm.pm].deployed -= 1;
        self.refresh(u);
    }

    fn mean_acquisition(&self) -> f64 {
        let init = self.cfg.system.solver.initial_vm_delay;
        (init + self.acquisition_sum) / (1 + self.acquisition_n) as f64
    }

    /// Re-arms or cancels the host group's timers and issues scale-up
    /// requests after any change to its state.
    fn refresh(&mut self, u: usize) {
        let micro = &self.cfg.system.micro;
        let (m, s_min, s_max, high, low, phi) = (
            micro.containers_per_vm,
            micro.min_vms,
            micro.max_vms,
            micro.high_util,
            micro.low_util,
            micro.container_rate,
        );
        let threshold = self.cfg.immediate_threshold;
        let now = self.now;
        let warm = self.warm;

        let g = &mut self.groups[u];
        let k = g.k();
        let util = (g.queue.len() + g.running) as f64 / (k * m) as f64;

        let instantiate = !g.queue.is_empty() && g.running < k * m;
        let mut arm_inst = None;
        if instantiate && !g.instantiation.armed {
            g.instantiation.generation += 1;
            g.instantiation.armed = true;
            arm_inst = Some(g.instantiation.generation);
            let head = g.queue.front_mut().unwrap();
            if head.started.is_none() {
                head.started = Some(now);
                if head.arrived >= warm && now - head.arrived <= threshold {
                    self.tally.immediate += 1;
                }
            }
        } else if !instantiate && g.instantiation.armed {
            g.instantiation.generation += 1;
            g.instantiation.armed = false;
        }

        let scale_up = !g.pending_vm && k < s_max && util >= high;
        if scale_up {
            g.pending_vm = true;
        }

        let releasable = if self.cfg.consolidate {
            g.running + m <= k * m
        } else {
            g.vms.iter().any(|v| v.running == 0)
        };
        let release = util <= low && k > s_min && releasable;
        let mut arm_rel = None;
        if release && !g.release.armed {
            g.release.generation += 1;
            g.release.armed = true;
            arm_rel = Some(g.release.generation);
        } else if !release && g.release.armed {
            g.release.generation += 1;
            g.release.armed = false;
        }

        if let Some(gen) = arm_inst {
            self.schedule_in(phi, Kind::Instantiated(u, gen));
        }
        if let Some(gen) = arm_rel {
            let rate = 1.0 / self.mean_acquisition();
            self.schedule_in(rate, Kind::Release(u, gen));
        }
        if scale_up {
            self.submit(Owner::User(u));
        }
    }

    fn submit(&mut self, owner: Owner) {
        let lq = self.cfg.system.infra.queue_size;
        let counted = self.after_warmup(self.now);
        if counted {
            self.tally.vm_arrivals += 1;
        }
        if self.global.len() >= lq {
            if counted {
                self.tally.vm_full_queue += 1;
            }
            self.drop_request(owner);
            return;
        }
        if counted && self.global.is_empty() {
            self.tally.vm_immediate += 1;
        }
        self.cons.vm_requests_admitted += 1;
        self.global.push_back(VmRequest {
            owner,
            arrived: self.now,
            left_queue: f64::NAN,
            started: f64::NAN,
        });
        if !self.lookup_busy {
            self.start_lookup(1);
        }
    }

    fn drop_request(&mut self, owner: Owner) {
        if let Owner::User(u) = owner {
            // The host group asks again at its next state change.
            self.groups[u].pending_vm = false;
        }
    }

    fn start_lookup(&mut self, attempt: u8) {
        self.lookup_busy = true;
        let rate = self.cfg.system.infra.lookup_rate;
        self.schedule_in(rate, Kind::LookupDone(attempt));
    }

    fn on_lookup(&mut self, attempt: u8) {
        let m = self.cfg.system.infra.vms_per_pm;
        let open: Vec<usize> = (0..self.pms.len())
            .filter(|&p| self.pms[p].occupancy() < m)
            .collect();
        let head_counted = self.global.front().is_some_and(|r| r.arrived >= self.warm);
        if head_counted {
            self.tally.lookups += 1;
        }
        if !open.is_empty() {
            if head_counted {
                self.tally.lookup_hits += 1;
            }
            let pm = open[self.rng.random_range(0..open.len())];
            let mut req = self.global.pop_front().expect("lookup without a request");
            req.left_queue = self.now;
            self.pms[pm].queue.push_back(req);
            if self.pms[pm].busy.is_none() {
                self.start_provisioning(pm);
            }
        } else if attempt == 1 {
            self.start_lookup(2);
            return;
        } else {
            let req = self.global.pop_front().expect("lookup without a request");
            if req.arrived >= self.warm {
                self.tally.vm_no_capacity += 1;
            }
            self.cons.vm_requests_rejected_after_admission += 1;
            self.drop_request(req.owner);
        }
        self.lookup_busy = false;
        if !self.global.is_empty() {
            self.start_lookup(1);
        }
    }

    fn start_provisioning(&mut self, pm: usize) {
        let delta = self.cfg.system.infra.instantiation_rate;
        let mut req = self.pms[pm].queue.pop_front().expect("idle hypervisor with empty queue");
        req.started = self.now;
        self.pms[pm].busy = Some(req);
        self.schedule_in(delta, Kind::Provisioned(pm));
    }

    fn on_provisioned(&mut self, pm: usize) {
        let now = self.now;
        let req = self.pms[pm].busy.take().expect("provisioning finished on idle PM");
        self.pms[pm].deployed += 1;
        self.cons.vms_provisioned += 1;
        if req.arrived >= self.warm {
            let t = &mut self.tally;
            t.vm_done += 1;
            t.vm_total += now - req.arrived;
            t.vm_queue += req.left_queue - req.arrived;
            t.vm_pm_wait += req.started - req.left_queue;
            t.vm_provision += now - req.started;
        }
        match req.owner {
            Owner::External => {
                let eta = self.cfg.system.infra.completion_rate;
                self.schedule_in(eta, Kind::ExternalExpiry(pm));
            }
            Owner::User(u) => {
                self.acquisition_sum += now - req.arrived;
                self.acquisition_n += 1;
                let id = self.fresh_vm_id();
                let g = &mut self.groups[u];
                g.pending_vm = false;
                g.vms.push(Vm { id, running: 0, pm });
                self.refresh(u);
            }
        }
        if !self.pms[pm].queue.is_empty() {
            self.start_provisioning(pm);
        }
    }

    fn audit(&mut self) {
        let micro = &self.cfg.system.micro;
        let cap = micro.max_vms * micro.containers_per_vm;
        let mut bad = 0;
        for g in &self.groups {
            let k = g.k();
            bad += (k > micro.max_vms || k < micro.min_vms) as u64;
            bad += (g.queue.len() + g.running > cap) as u64;
            bad += g.vms.iter().filter(|v| v.running > micro.containers_per_vm).count() as u64;
            bad += (g.vms.iter().map(|v| v.running).sum::<usize>() != g.running) as u64;
        }
        let m = self.cfg.system.infra.vms_per_pm;
        bad += self.pms.iter().filter(|p| p.occupancy() > m).count() as u64;
        bad += (self.global.len() > self.cfg.system.infra.queue_size) as u64;
        self.violations += bad;
    }
}
