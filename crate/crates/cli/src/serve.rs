use std::fs::File;
use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use anyhow::Context;
use olia::emulator::runtime::{CommandSender, Device, DEFAULT_QUEUE_CAPACITY};
use olia::emulator::Emulator;
use olia::lab::FrameCsvWriter;
use olia::protocol::{format_frame, CommandFramer};
use tungstenite::Message;

use crate::{Clock, InstrumentArgs};

const POLL: Duration = Duration::from_millis(20);

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Transport {
    Stdio,
    Tcp,
}

#[derive(clap::Args, Debug)]
pub struct ServeArgs {
    #[arg(long, value_enum, default_value = "tcp")]
    transport: Transport,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    host: IpAddr,
    /// TCP port for the line protocol; 0 picks a free port.
    #[arg(long, default_value_t = 5025)]
    port: u16,
    /// Also accept websocket clients on this port; 0 picks a free port.
    #[arg(long)]
    bridge_port: Option<u16>,
    #[arg(long, value_enum, default_value = "realtime")]
    clock: Clock,
    /// Stop after this much simulated time, in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Append every frame to this CSV file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[command(flatten)]
    instrument: InstrumentArgs,
}

/// Where the pump sends formatted frame lines: the connected client, if any.
#[derive(Clone, Default)]
struct ClientSlot {
    busy: Arc<AtomicBool>,
    sink: Arc<Mutex<Option<Sender<String>>>>,
}

impl ClientSlot {
    fn claim(&self) -> Option<Receiver<String>> {
        if self.busy.swap(true, Ordering::SeqCst) {
            return None;
        }
        let (tx, rx) = mpsc::channel();
        *self.sink.lock().unwrap() = Some(tx);
        Some(rx)
    }

    fn release(&self) {
        *self.sink.lock().unwrap() = None;
        self.busy.store(false, Ordering::SeqCst);
    }

    fn send(&self, line: &str) {
        if let Some(tx) = self.sink.lock().unwrap().as_ref() {
            let _ = tx.send(line.to_string());
        }
    }
}

pub fn run(args: ServeArgs) -> anyhow::Result<()> {
    let (config, input) = args.instrument.build(args.clock.into())?;
    let emulator = Emulator::new(config, input).context("invalid instrument configuration")?;
    let device = Device::spawn(emulator, DEFAULT_QUEUE_CAPACITY);
    let slot = ClientSlot::default();

    if args.transport == Transport::Tcp {
        let listener = TcpListener::bind(SocketAddr::new(args.host, args.port)).context("binding TCP port")?;
        log::info!("listening on {}", listener.local_addr()?);
        spawn_acceptor(listener, slot.clone(), device.command_sender(), serve_tcp);
    }
    if let Some(port) = args.bridge_port {
        let listener = TcpListener::bind(SocketAddr::new(args.host, port)).context("binding websocket port")?;
        log::info!("websocket bridge listening on {}", listener.local_addr()?);
        spawn_acceptor(listener, slot.clone(), device.command_sender(), serve_websocket);
    }
    if args.transport == Transport::Stdio {
        let commands = device.command_sender();
        thread::spawn(move || read_commands(io::stdin().lock(), &commands));
    }

    let mut recorder = match &args.record {
        Some(path) => Some(FrameCsvWriter::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ))?),
        None => None,
    };
    let mut stdout = (args.transport == Transport::Stdio).then(io::stdout);
    let end = args.duration.map(|d| d - 1e-9);
    loop {
        for message in device.diagnostics() {
            log::warn!("{message}");
        }
        let Some(frame) = device.frames().pop_timeout(Duration::from_millis(200)) else {
            if device.frames().is_closed() {
                break;
            }
            continue;
        };
        let line = format_frame(&frame.frame);
        if let Some(rec) = recorder.as_mut() {
            rec.write(&frame).context("writing recording")?;
        }
        if let Some(out) = stdout.as_mut() {
            if out.write_all(line.as_bytes()).and_then(|_| out.flush()).is_err() {
                break;
            }
        }
        slot.send(&line);
        if end.is_some_and(|end| frame.time >= end) {
            break;
        }
    }
    let dropped = device.frames().dropped();
    if dropped > 0 {
        log::warn!("{dropped} frames dropped because the reader fell behind");
    }
    device.shutdown();
    Ok(())
}

fn spawn_acceptor(
    listener: TcpListener,
    slot: ClientSlot,
    commands: CommandSender,
    session: fn(TcpStream, &Receiver<String>, &CommandSender) -> io::Result<()>,
) {
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let peer = stream.peer_addr().map_or_else(|_| "?".to_string(), |a| a.to_string());
            let Some(frames) = slot.claim() else {
                log::warn!("refusing {peer}: a client is already connected");
                continue;
            };
            log::info!("client {peer} connected");
            let (slot, commands) = (slot.clone(), commands.clone());
            thread::spawn(move || {
                if let Err(e) = session(stream, &frames, &commands) {
                    log::debug!("client {peer}: {e}");
                }
                slot.release();
                log::info!("client {peer} disconnected");
            });
        }
    });
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

fn read_commands(mut input: impl Read, commands: &CommandSender) {
    let mut framer = CommandFramer::new();
    let mut buf = [0u8; 1024];
    while let Ok(n) = input.read(&mut buf) {
        if n == 0 {
            break;
        }
        for line in framer.push(&String::from_utf8_lossy(&buf[..n])) {
            if !commands.send_line(&line) {
                return;
            }
        }
    }
}

fn serve_tcp(mut stream: TcpStream, frames: &Receiver<String>, commands: &CommandSender) -> io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut framer = CommandFramer::new();
    let mut buf = [0u8; 1024];
    loop {
        match stream.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => {
                for line in framer.push(&String::from_utf8_lossy(&buf[..n])) {
                    commands.send_line(&line);
                }
            }
            Err(e) if is_timeout(&e) => {}
            Err(e) => return Err(e),
        }
        for line in frames.try_iter() {
            stream.write_all(line.as_bytes())?;
        }
    }
}

fn serve_websocket(stream: TcpStream, frames: &Receiver<String>, commands: &CommandSender) -> io::Result<()> {
    let mut ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let mut framer = CommandFramer::new();
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                // a message without a terminator is still one whole command
                let text = if text.ends_with(['\r', '\n']) { text.to_string() } else { format!("{text}\n") };
                for line in framer.push(&text) {
                    commands.send_line(&line);
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(io::Error::other(e.to_string())),
        }
        for line in frames.try_iter() {
            if let Err(e) = ws.send(Message::text(line)) {
                return Err(io::Error::other(e.to_string()));
            }
        }
    }
}
