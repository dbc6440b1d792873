//! Multi-process transport. Every process opens one TCP connection to a
//! coordinator, which completes exchanges and sends each member its reply.
//!
//! Wire format, all integers little-endian:
//! - hello: `u32 rank, u32 world_size`
//! - request: `u8 kind` (255 = goodbye), `u64 comm_id`, `u32 size`,
//!   `u32 index`, `u32 root`, `u64 n`, then `n` `f64`
//! - reply: `u8 status`; status 0 is followed by `u32 count` and `count`
//!   arrays (`u64 n` + `n` `f64`), status 1 by `u32 len` and a UTF-8 message

use std::collections::HashMap;
use std::env;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::process::{Child, Command, ExitStatus};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Communicator, Exchange, ExchangeKind, Fabric, FabricComm};
use crate::error::{MscError, Result};

pub const ENV_RANK: &str = "MSC_RANK";
pub const ENV_SIZE: &str = "MSC_WORLD_SIZE";
pub const ENV_COORD: &str = "MSC_COORD";
/// Set to `1` when no built-in launcher runs the coordinator; world rank 0
/// then hosts it on `MSC_COORD`.
pub const ENV_HOST_COORD: &str = "MSC_HOST_COORD";

const GOODBYE: u8 = 255;

fn comm_err(e: io::Error) -> MscError {
    MscError::Comm(e.to_string())
}

fn write_array<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    w.write_u64::<LittleEndian>(xs.len() as u64)?;
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_array<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}

fn write_request<W: Write>(w: &mut W, req: &Exchange) -> io::Result<()> {
    w.write_u8(req.kind.code())?;
    w.write_u64::<LittleEndian>(req.comm_id)?;
    w.write_u32::<LittleEndian>(req.size as u32)?;
    w.write_u32::<LittleEndian>(req.index as u32)?;
    w.write_u32::<LittleEndian>(req.root as u32)?;
    write_array(w, &req.payload)?;
    w.flush()
}

/// `None` on goodbye.
fn read_request<R: Read>(r: &mut R) -> io::Result<Option<Exchange>> {
    let code = r.read_u8()?;
    if code == GOODBYE {
        return Ok(None);
    }
    let kind = ExchangeKind::from_code(code)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad request kind {code}")))?;
    let comm_id = r.read_u64::<LittleEndian>()?;
    let size = r.read_u32::<LittleEndian>()? as usize;
    let index = r.read_u32::<LittleEndian>()? as usize;
    let root = r.read_u32::<LittleEndian>()? as usize;
    let payload = read_array(r)?;
    Ok(Some(Exchange {
        comm_id,
        size,
        index,
        kind,
        root,
        payload,
    }))
}

fn write_reply<W: Write>(w: &mut W, reply: std::result::Result<&[Vec<f64>], &str>) -> io::Result<()> {
    match reply {
        Ok(pieces) => {
            w.write_u8(0)?;
            w.write_u32::<LittleEndian>(pieces.len() as u32)?;
            for p in pieces {
                write_array(w, p)?;
            }
        }
        Err(msg) => {
            w.write_u8(1)?;
            w.write_u32::<LittleEndian>(msg.len() as u32)?;
            w.write_all(msg.as_bytes())?;
        }
    }
    w.flush()
}

fn read_reply<R: Read>(r: &mut R) -> Result<Vec<Vec<f64>>> {
    let status = r.read_u8().map_err(comm_err)?;
    if status == 0 {
        let count = r.read_u32::<LittleEndian>().map_err(comm_err)?;
        (0..count).map(|_| read_array(r).map_err(comm_err)).collect()
    } else {
        let len = r.read_u32::<LittleEndian>().map_err(comm_err)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(comm_err)?;
        Err(MscError::Comm(String::from_utf8_lossy(&buf).into_owned()))
    }
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    closed: bool,
}

/// Client side: one blocking connection per process.
pub struct SocketFabric {
    conn: Mutex<Connection>,
}

impl SocketFabric {
    /// Connects to the coordinator, retrying until `deadline` elapses.
    pub fn connect(addr: impl ToSocketAddrs, rank: usize, size: usize, deadline: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs().map_err(comm_err)?.collect();
        let start = Instant::now();
        let stream = loop {
            match addrs.iter().find_map(|a| TcpStream::connect(a).ok()) {
                Some(s) => break s,
                None if start.elapsed() < deadline => thread::sleep(Duration::from_millis(20)),
                None => return Err(MscError::Comm(format!("cannot reach coordinator at {addrs:?}"))),
            }
        };
        stream.set_nodelay(true).map_err(comm_err)?;
        let mut writer = BufWriter::new(stream.try_clone().map_err(comm_err)?);
        writer.write_u32::<LittleEndian>(rank as u32).map_err(comm_err)?;
        writer.write_u32::<LittleEndian>(size as u32).map_err(comm_err)?;
        writer.flush().map_err(comm_err)?;
        Ok(Self {
            conn: Mutex::new(Connection {
                reader: BufReader::new(stream),
                writer,
                closed: false,
            }),
        })
    }
}

impl Fabric for SocketFabric {
    fn exchange(&self, req: Exchange) -> Result<Vec<Vec<f64>>> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if conn.closed {
            return Err(MscError::Comm("connection already closed".into()));
        }
        write_request(&mut conn.writer, &req).map_err(comm_err)?;
        read_reply(&mut conn.reader)
    }
}

impl SocketFabric {
    /// Tells the coordinator this process is done. Later exchanges fail.
    pub fn close(&self) {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if !conn.closed {
            conn.closed = true;
            let _ = conn.writer.write_u8(GOODBYE).and_then(|_| conn.writer.flush());
        }
    }
}

impl Drop for SocketFabric {
    fn drop(&mut self) {
        self.close();
    }
}

enum Event {
    Request(usize, Exchange),
    Bye(usize),
    Lost(usize, String),
}

struct Pending {
    kind: ExchangeKind,
    root: usize,
    pieces: Vec<Option<(usize, Vec<f64>)>>,
    arrived: usize,
}

/// Accepts `world_size` connections on `listener` and serves exchanges until
/// every process has said goodbye. Returns an error if a process vanishes
/// mid-job; its peers receive that error as their reply.
pub fn serve(listener: TcpListener, world_size: usize) -> Result<()> {
    let mut writers: Vec<Option<BufWriter<TcpStream>>> = (0..world_size).map(|_| None).collect();
    let (tx, rx) = mpsc::channel();
    let mut accepted = 0;
    while accepted < world_size {
        let (stream, _) = listener.accept().map_err(comm_err)?;
        stream.set_nodelay(true).map_err(comm_err)?;
        let mut reader = BufReader::new(stream.try_clone().map_err(comm_err)?);
        let rank = reader.read_u32::<LittleEndian>().map_err(comm_err)? as usize;
        let size = reader.read_u32::<LittleEndian>().map_err(comm_err)? as usize;
        if size != world_size || rank >= world_size || writers[rank].is_some() {
            return Err(MscError::Startup(format!(
                "bad hello: rank {rank} of {size}, coordinator expects {world_size}"
            )));
        }
        writers[rank] = Some(BufWriter::new(stream));
        accepted += 1;
        let tx = tx.clone();
        thread::spawn(move || loop {
            match read_request(&mut reader) {
                Ok(Some(req)) => {
                    if tx.send(Event::Request(rank, req)).is_err() {
                        return;
                    }
                }
                Ok(None) => {
                    let _ = tx.send(Event::Bye(rank));
                    return;
                }
                Err(e) => {
                    let _ = tx.send(Event::Lost(rank, e.to_string()));
                    return;
                }
            }
        });
    }
    drop(tx);

    let mut pending: HashMap<u64, Pending> = HashMap::new();
    let mut done = 0;
    let mut failure: Option<String> = None;
    while done < world_size {
        let Ok(ev) = rx.recv() else { break };
        match ev {
            Event::Request(rank, req) => {
                if let Some(msg) = &failure {
                    if let Some(w) = writers[rank].as_mut() {
                        let _ = write_reply(w, Err(msg));
                    }
                    continue;
                }
                let entry = pending.entry(req.comm_id).or_insert_with(|| Pending {
                    kind: req.kind,
                    root: req.root,
                    pieces: vec![None; req.size],
                    arrived: 0,
                });
                if entry.kind != req.kind || entry.root != req.root || entry.pieces.len() != req.size {
                    failure = Some(format!("collective mismatch on communicator {:#x}", req.comm_id));
                } else if req.index >= req.size || entry.pieces[req.index].is_some() {
                    failure = Some(format!("bad member index {} on communicator {:#x}", req.index, req.comm_id));
                } else {
                    entry.pieces[req.index] = Some((rank, req.payload));
                    entry.arrived += 1;
                    if entry.arrived == entry.pieces.len() {
                        let p = pending.remove(&req.comm_id).expect("pending entry");
                        let (owners, pieces): (Vec<usize>, Vec<Vec<f64>>) =
                            p.pieces.into_iter().map(|x| x.expect("complete")).unzip();
                        for (index, owner) in owners.into_iter().enumerate() {
                            let reply = p.kind.reply_for(index, p.root, &pieces);
                            if let Some(w) = writers[owner].as_mut() {
                                let _ = write_reply(w, Ok(&reply));
                            }
                        }
                    }
                }
                if let Some(msg) = &failure {
                    fail_pending(&mut pending, &mut writers, msg);
                }
            }
            Event::Bye(rank) => {
                writers[rank] = None;
                done += 1;
            }
            Event::Lost(rank, why) => {
                writers[rank] = None;
                done += 1;
                let msg = format!("rank {rank} disconnected: {why}");
                failure.get_or_insert(msg.clone());
                fail_pending(&mut pending, &mut writers, &msg);
            }
        }
    }
    match failure {
        Some(msg) => Err(MscError::Comm(msg)),
        None => Ok(()),
    }
}

fn fail_pending(pending: &mut HashMap<u64, Pending>, writers: &mut [Option<BufWriter<TcpStream>>], msg: &str) {
    for (_, p) in pending.drain() {
        for (owner, _) in p.pieces.into_iter().flatten() {
            if let Some(w) = writers[owner].as_mut() {
                let _ = write_reply(w, Err(msg));
            }
        }
    }
}

/// World size and rank as announced by a launcher, if any: the built-in
/// launcher's variables first, then Open MPI's, then PMI's.
pub fn launcher_rank_size() -> Option<(usize, usize)> {
    let pairs = [
        (ENV_RANK, ENV_SIZE),
        ("OMPI_COMM_WORLD_RANK", "OMPI_COMM_WORLD_SIZE"),
        ("PMI_RANK", "PMI_SIZE"),
    ];
    pairs.iter().find_map(|(r, s)| {
        let rank = env::var(r).ok()?.parse().ok()?;
        let size = env::var(s).ok()?.parse().ok()?;
        Some((rank, size))
    })
}

/// Joins the job described by the environment. Returns `Ok(None)` when the
/// process was not started by a launcher.
pub fn world_from_env() -> Result<Option<Box<dyn Communicator>>> {
    let Some((rank, size)) = launcher_rank_size() else {
        return Ok(None);
    };
    if rank >= size {
        return Err(MscError::Startup(format!("rank {rank} >= world size {size}")));
    }
    let addr = env::var(ENV_COORD)
        .map_err(|_| MscError::Startup(format!("{ENV_COORD} must name the coordinator address")))?;
    let hosted = if rank == 0 && env::var(ENV_HOST_COORD).is_ok_and(|v| v == "1") {
        let listener = TcpListener::bind(&addr).map_err(|e| MscError::Startup(format!("bind {addr}: {e}")))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let _ = tx.send(serve(listener, size));
        });
        Some(rx)
    } else {
        None
    };
    let fabric = Arc::new(SocketFabric::connect(addr.as_str(), rank, size, Duration::from_secs(60))?);
    let world = FabricComm::world(fabric.clone(), rank, size);
    Ok(Some(match hosted {
        None => Box::new(world),
        Some(done) => Box::new(HostedWorld {
            inner: Some(world),
            fabric,
            done,
        }),
    }))
}

/// World communicator of the rank that runs the coordinator in-process.
/// Dropping it waits until every peer has disconnected, so the coordinator
/// is not torn down while others still expect replies.
struct HostedWorld {
    inner: Option<FabricComm>,
    fabric: Arc<SocketFabric>,
    done: mpsc::Receiver<Result<()>>,
}

impl HostedWorld {
    fn world(&mut self) -> &mut FabricComm {
        self.inner.as_mut().expect("live world")
    }
}

impl Communicator for HostedWorld {
    fn rank(&self) -> usize {
        self.inner.as_ref().expect("live world").rank()
    }

    fn size(&self) -> usize {
        self.inner.as_ref().expect("live world").size()
    }

    fn barrier(&mut self) -> Result<()> {
        self.world().barrier()
    }

    fn all_reduce_max(&mut self, value: f64) -> Result<f64> {
        self.world().all_reduce_max(value)
    }

    fn all_gather_varcount(&mut self, local: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.world().all_gather_varcount(local)
    }

    fn gather_varcount(&mut self, local: &[f64], root: usize) -> Result<Option<Vec<Vec<f64>>>> {
        self.world().gather_varcount(local, root)
    }

    fn broadcast(&mut self, data: &[f64], root: usize) -> Result<Vec<f64>> {
        self.world().broadcast(data, root)
    }

    fn split(&mut self, color: usize, key: usize) -> Result<Box<dyn Communicator>> {
        self.world().split(color, key)
    }
}

impl Drop for HostedWorld {
    fn drop(&mut self) {
        self.inner = None;
        self.fabric.close();
        match self.done.recv_timeout(Duration::from_secs(600)) {
            Ok(Ok(())) => {}
            Ok(Err(e)) => log::error!("coordinator: {e}"),
            Err(_) => log::error!("coordinator did not finish"),
        }
    }
}

/// Exit status of every rank launched by [`launch`], in rank order.
#[derive(Debug)]
pub struct LaunchReport {
    pub statuses: Vec<ExitStatus>,
    pub coordinator: Result<()>,
}

impl LaunchReport {
    pub fn success(&self) -> bool {
        self.coordinator.is_ok() && self.statuses.iter().all(ExitStatus::success)
    }
}

/// Starts `size` copies of `exe args…` on this machine, wired to a
/// coordinator run on a thread of the calling process.
pub fn launch(size: usize, exe: &Path, args: &[String]) -> Result<LaunchReport> {
    if size == 0 {
        return Err(MscError::Startup("cannot launch zero processes".into()));
    }
    let listener = TcpListener::bind("127.0.0.1:0").map_err(comm_err)?;
    let addr = listener.local_addr().map_err(comm_err)?;
    let server = thread::spawn(move || serve(listener, size));
    let mut children: Vec<Child> = Vec::with_capacity(size);
    for rank in 0..size {
        let child = Command::new(exe)
            .args(args)
            .env(ENV_RANK, rank.to_string())
            .env(ENV_SIZE, size.to_string())
            .env(ENV_COORD, addr.to_string())
            .env_remove(ENV_HOST_COORD)
            .spawn();
        match child {
            Ok(c) => children.push(c),
            Err(e) => {
                for c in &mut children {
                    let _ = c.kill();
                }
                return Err(MscError::Startup(format!("spawn rank {rank}: {e}")));
            }
        }
    }
    let statuses = children
        .iter_mut()
        .map(|c| c.wait().map_err(comm_err))
        .collect::<Result<Vec<_>>>()?;
    let coordinator = if statuses.iter().all(ExitStatus::success) {
        server
            .join()
            .unwrap_or_else(|_| Err(MscError::Comm("coordinator panicked".into())))
    } else {
        // ranks that died before connecting would leave the coordinator
        // blocked in accept; it is detached rather than joined
        Err(MscError::Comm("one or more ranks failed".into()))
    };
    Ok(LaunchReport { statuses, coordinator })
}
