//! Live service: steps a [`Simulator`] against the wall clock and bridges it
//! to WebSocket clients.
//!
//! One thread drives the simulation; each connection gets its own thread.
//! Client inputs go through the simulator command queue. Outgoing frames are
//! buffered in a bounded per-client ring that drops the oldest frame, so a slow
//! client never stalls the step loop.

use std::collections::VecDeque;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use tungstenite::{Message, WebSocket};

use crate::protocol::{BoxFrame, ClientFrame, ErrorCode, PhaseAction, Role, ServerFrame, StateFrame, PROTOCOL_VERSION};
use crate::regions::CartesianBoxRegion;
use crate::sim::{SimCommand, Simulator};

/// Largest simulated span caught up in one scheduler pass, seconds.
const MAX_CATCH_UP: f64 = 0.05;
const POLL_INTERVAL: Duration = Duration::from_millis(2);

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: String,
    /// Simulated seconds per wall-clock second.
    pub realtime_factor: f64,
    /// Simulated seconds between state broadcasts, rounded to whole steps.
    pub broadcast_period: f64,
    /// Frames buffered per client before the oldest is dropped.
    pub ring_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8765".into(), realtime_factor: 1.0, broadcast_period: 0.02, ring_capacity: 64 }
    }
}

/// Bounded outgoing queue for one client.
#[derive(Debug)]
pub struct Ring {
    frames: Mutex<VecDeque<String>>,
    capacity: usize,
    dropped: AtomicU64,
}

impl Ring {
    pub fn new(capacity: usize) -> Self {
        Self { frames: Mutex::new(VecDeque::with_capacity(capacity)), capacity: capacity.max(1), dropped: AtomicU64::new(0) }
    }

    pub fn push(&self, frame: String) {
        let mut q = lock(&self.frames);
        if q.len() >= self.capacity {
            q.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        q.push_back(frame);
    }

    pub fn drain(&self) -> Vec<String> {
        lock(&self.frames).drain(..).collect()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

struct Client {
    id: u64,
    ring: Arc<Ring>,
}

struct Control {
    paused: bool,
    speed: f64,
    expert: Option<u64>,
    clients: Vec<Client>,
    /// Frames with a live drag, per owning client.
    drags: Vec<(u64, usize)>,
}

/// State shared by the scheduler and the connection handlers.
pub struct Hub {
    sim: Mutex<Simulator>,
    control: Mutex<Control>,
    config: ServiceConfig,
    broadcast_every: u64,
    steps: AtomicU64,
    next_id: AtomicU64,
    outcome_sent: AtomicBool,
}

impl Hub {
    pub fn new(sim: Simulator, config: ServiceConfig) -> Arc<Self> {
        let dt = sim.scenario().dt;
        let broadcast_every = ((config.broadcast_period / dt).round() as u64).max(1);
        Arc::new(Self {
            sim: Mutex::new(sim),
            control: Mutex::new(Control { paused: false, speed: 1.0, expert: None, clients: Vec::new(), drags: Vec::new() }),
            config,
            broadcast_every,
            steps: AtomicU64::new(0),
            next_id: AtomicU64::new(1),
            outcome_sent: AtomicBool::new(false),
        })
    }

    pub fn with_sim<R>(&self, f: impl FnOnce(&Simulator) -> R) -> R {
        f(&lock(&self.sim))
    }

    pub fn paused(&self) -> bool {
        lock(&self.control).paused
    }

    /// Current simulated seconds per wall-clock second.
    pub fn rate(&self) -> f64 {
        let c = lock(&self.control);
        if c.paused {
            0.0
        } else {
            self.config.realtime_factor * c.speed
        }
    }

    /// Registers a client. Fails with an error frame if the expert role is taken.
    pub fn connect(&self, role: Role) -> Result<(u64, Arc<Ring>, ServerFrame), ServerFrame> {
        let mut c = lock(&self.control);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        if role == Role::Expert {
            if c.expert.is_some() {
                return Err(ServerFrame::error(ErrorCode::RoleConflict, "expert role is held by another connection"));
            }
            c.expert = Some(id);
        }
        let ring = Arc::new(Ring::new(self.config.ring_capacity));
        c.clients.push(Client { id, ring: ring.clone() });
        let sim = lock(&self.sim);
        let sc = sim.scenario();
        let welcome = ServerFrame::Welcome {
            protocol: PROTOCOL_VERSION,
            role,
            n_dof: sc.model.n_dof(),
            dt: sc.dt,
            image_size: [sc.camera.width, sc.camera.height],
        };
        Ok((id, ring, welcome))
    }

    /// Removes a client, releasing its role and any drags it holds.
    pub fn disconnect(&self, id: u64) {
        let mut c = lock(&self.control);
        c.clients.retain(|cl| cl.id != id);
        if c.expert == Some(id) {
            c.expert = None;
        }
        let mut sim = lock(&self.sim);
        c.drags.retain(|&(owner, joint_index)| {
            if owner == id {
                sim.enqueue(SimCommand::Drag { joint_index, vector: Vector3::zeros(), active: false });
                false
            } else {
                true
            }
        });
    }

    /// Applies one client frame; returns the direct reply, if any.
    pub fn handle(&self, id: u64, frame: ClientFrame) -> Option<ServerFrame> {
        let mut c = lock(&self.control);
        if c.expert != Some(id) {
            return Some(match frame {
                ClientFrame::Hello { .. } => ServerFrame::error(ErrorCode::MalformedFrame, "hello must be the first frame"),
                _ => ServerFrame::error(ErrorCode::NotExpert, "this connection does not hold the expert role"),
            });
        }
        match frame {
            ClientFrame::Hello { .. } => Some(ServerFrame::error(ErrorCode::MalformedFrame, "hello must be the first frame")),
            ClientFrame::Drag { joint_index, vector, active } => {
                let mut sim = lock(&self.sim);
                let n = sim.scenario().model.n_dof();
                if joint_index > n || !vector.iter().all(|v| v.is_finite()) {
                    return Some(ServerFrame::error(
                        ErrorCode::InvalidDrag,
                        format!("joint_index must be at most {n} and vector finite"),
                    ));
                }
                c.drags.retain(|&(_, j)| j != joint_index);
                if active {
                    c.drags.push((id, joint_index));
                }
                sim.enqueue(SimCommand::Drag { joint_index, vector: Vector3::from(vector), active });
                None
            }
            ClientFrame::Region { center, half_sizes } => {
                let mut sim = lock(&self.sim);
                let region = CartesianBoxRegion {
                    center: Vector3::from(center),
                    half_sizes: Vector3::from(half_sizes),
                    gains: sim.regions().cartesian_box.gains,
                };
                match sim.check_box(&region) {
                    Ok(()) => {
                        sim.enqueue(SimCommand::SetBox(region));
                        Some(ServerFrame::RegionAck(BoxFrame { center, half_sizes }))
                    }
                    Err(e) => Some(ServerFrame::error(ErrorCode::InvalidRegion, e.to_string())),
                }
            }
            ClientFrame::PhaseCtl { action, speed } => match action {
                PhaseAction::Pause => {
                    c.paused = true;
                    None
                }
                PhaseAction::Resume => {
                    c.paused = false;
                    None
                }
                PhaseAction::Speed => match speed {
                    Some(s) if s > 0.0 && s.is_finite() => {
                        c.speed = s;
                        None
                    }
                    _ => Some(ServerFrame::error(ErrorCode::InvalidSpeed, "speed must be positive and finite")),
                },
            },
        }
    }

    fn broadcast(&self, c: &Control, frame: &ServerFrame) {
        let text = frame.to_text();
        for cl in &c.clients {
            cl.ring.push(text.clone());
        }
    }

    /// Advances one step and broadcasts on the configured cadence. Returns
    /// false once the run has finished.
    pub fn tick(&self) -> bool {
        let mut sim = lock(&self.sim);
        if sim.is_finished() {
            drop(sim);
            self.announce_outcome();
            return false;
        }
        sim.step();
        let k = self.steps.fetch_add(1, Ordering::Relaxed) + 1;
        if k % self.broadcast_every == 0 || sim.is_finished() {
            let world = sim.snapshot();
            drop(sim);
            let c = lock(&self.control);
            let frame = ServerFrame::State(StateFrame::from_world(&world, c.paused, c.speed));
            self.broadcast(&c, &frame);
        }
        true
    }

    fn announce_outcome(&self) {
        if self.outcome_sent.swap(true, Ordering::Relaxed) {
            return;
        }
        let outcome = lock(&self.sim).outcome().cloned();
        if let Some(outcome) = outcome {
            let c = lock(&self.control);
            self.broadcast(&c, &ServerFrame::Outcome { outcome });
        }
    }

    pub fn broadcast_every(&self) -> u64 {
        self.broadcast_every
    }
}

/// A running service; dropping it does not stop the threads, call [`shutdown`](Self::shutdown).
pub struct ServiceHandle {
    hub: Arc<Hub>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the listener or scheduler exits.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds the listener and starts the scheduler and accept threads.
pub fn start(sim: Simulator, config: ServiceConfig) -> io::Result<ServiceHandle> {
    if !(config.realtime_factor > 0.0 && config.realtime_factor.is_finite()) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "realtime factor must be positive"));
    }
    let listener = TcpListener::bind(&config.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let dt = sim.scenario().dt;
    let hub = Hub::new(sim, config);
    let stop = Arc::new(AtomicBool::new(false));

    let scheduler = {
        let hub = hub.clone();
        let stop = stop.clone();
        thread::Builder::new().name("cobot-sim".into()).spawn(move || run_scheduler(&hub, dt, &stop))?
    };
    let acceptor = {
        let hub = hub.clone();
        let stop = stop.clone();
        thread::Builder::new().name("cobot-accept".into()).spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let hub = hub.clone();
                        let stop = stop.clone();
                        let spawned = thread::Builder::new().name(format!("cobot-conn-{peer}")).spawn(move || {
                            if let Err(e) = serve_connection(&hub, stream, &stop) {
                                log::debug!("connection {peer} closed: {e}");
                            }
                        });
                        if let Err(e) = spawned {
                            log::warn!("cannot spawn connection thread: {e}");
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL_INTERVAL),
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        thread::sleep(POLL_INTERVAL);
                    }
                }
            }
        })?
    };
    log::info!("serving on ws://{addr}");
    Ok(ServiceHandle { hub, addr, stop, threads: vec![scheduler, acceptor] })
}

fn run_scheduler(hub: &Hub, dt: f64, stop: &AtomicBool) {
    let mut budget = 0.0;
    let mut last = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        let now = Instant::now();
        budget = (budget + now.duration_since(last).as_secs_f64() * hub.rate()).min(MAX_CATCH_UP);
        last = now;
        while budget >= dt {
            if !hub.tick() {
                budget = 0.0;
                break;
            }
            budget -= dt;
        }
        thread::sleep(POLL_INTERVAL);
    }
}

fn serve_connection(hub: &Hub, stream: TcpStream, stop: &AtomicBool) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::Io(io::ErrorKind::WouldBlock.into()),
    })?;
    ws.get_mut().set_read_timeout(Some(Duration::from_secs(5)))?;

    let role = match read_frame(&mut ws)? {
        Some(ClientFrame::Hello { role }) => role,
        Some(_) | None => {
            send(&mut ws, &ServerFrame::error(ErrorCode::MalformedFrame, "expected a hello frame"))?;
            ws.close(None)?;
            return Ok(());
        }
    };
    let (id, ring, welcome) = match hub.connect(role) {
        Ok(v) => v,
        Err(refusal) => {
            send(&mut ws, &refusal)?;
            ws.close(None)?;
            let _ = ws.flush();
            return Ok(());
        }
    };
    send(&mut ws, &welcome)?;
    ws.get_mut().set_read_timeout(Some(POLL_INTERVAL))?;
    let result = connection_loop(hub, id, &ring, &mut ws, stop);
    hub.disconnect(id);
    result
}

fn connection_loop(
    hub: &Hub,
    id: u64,
    ring: &Ring,
    ws: &mut WebSocket<TcpStream>,
    stop: &AtomicBool,
) -> Result<(), tungstenite::Error> {
    while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = match serde_json::from_str::<ClientFrame>(text.as_str()) {
                    Ok(frame) => hub.handle(id, frame),
                    Err(e) => Some(ServerFrame::error(ErrorCode::MalformedFrame, e.to_string())),
                };
                if let Some(reply) = reply {
                    send(ws, &reply)?;
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        for text in ring.drain() {
            ws.write(Message::text(text))?;
        }
        ws.flush()?;
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    Ok(())
}

fn read_frame(ws: &mut WebSocket<TcpStream>) -> Result<Option<ClientFrame>, tungstenite::Error> {
    loop {
        match ws.read()? {
            Message::Text(text) => return Ok(serde_json::from_str(text.as_str()).ok()),
            Message::Close(_) => return Ok(None),
            _ => {}
        }
    }
}

fn send(ws: &mut WebSocket<TcpStream>, frame: &ServerFrame) -> Result<(), tungstenite::Error> {
    ws.send(Message::text(frame.to_text()))
}
