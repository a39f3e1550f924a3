//! Runs an [`Emulator`] on its own thread.
//!
//! Commands reach the sample loop through an ordered channel and are applied between
//! samples; frames leave through a bounded [`FrameQueue`] that drops the oldest entry
//! rather than stall the loop.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{ClockMode, Emulator};
use crate::protocol::OutputFrame;

/// Frames held before the oldest is discarded.
pub const DEFAULT_QUEUE_CAPACITY: usize = 256;

/// A timestamped frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedFrame {
    pub time: f64,
    pub frame: OutputFrame,
}

/// Bounded multi-producer queue that overwrites its oldest entry when full.
#[derive(Debug)]
pub struct FrameQueue {
    items: Mutex<VecDeque<TimedFrame>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            items: Mutex::new(VecDeque::with_capacity(capacity)),
            ready: Condvar::new(),
            capacity,
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        }
    }

    /// Never blocks on consumers.
    pub fn push(&self, frame: TimedFrame) {
        let mut items = self.items.lock().expect("frame queue poisoned");
        if items.len() == self.capacity {
            items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        items.push_back(frame);
        drop(items);
        self.ready.notify_one();
    }

    /// Waits up to `timeout` for a frame. `None` on timeout or once closed and drained.
    pub fn pop_timeout(&self, timeout: Duration) -> Option<TimedFrame> {
        let deadline = Instant::now() + timeout;
        let mut items = self.items.lock().expect("frame queue poisoned");
        loop {
            if let Some(frame) = items.pop_front() {
                return Some(frame);
            }
            if self.is_closed() {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            items = self.ready.wait_timeout(items, deadline - now).expect("frame queue poisoned").0;
        }
    }

    pub fn try_pop(&self) -> Option<TimedFrame> {
        self.items.lock().expect("frame queue poisoned").pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.lock().expect("frame queue poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames discarded because the queue was full.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.ready.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }
}

enum Control {
    Line(String),
    Shutdown,
}

/// Cloneable handle for queueing command lines from any thread.
#[derive(Clone)]
pub struct CommandSender(Sender<Control>);

impl CommandSender {
    /// Queues a command line; returns `false` once the device has stopped.
    pub fn send_line(&self, line: &str) -> bool {
        self.0.send(Control::Line(line.to_string())).is_ok()
    }
}

/// Handle to an emulator running on a worker thread.
pub struct Device {
    control: Sender<Control>,
    frames: Arc<FrameQueue>,
    diagnostics: Receiver<String>,
    worker: Option<JoinHandle<Emulator>>,
}

impl Device {
    /// Starts the sample loop. In [`ClockMode::RealTime`] each frame is released when the
    /// wall clock reaches its simulated timestamp.
    pub fn spawn(emulator: Emulator, capacity: usize) -> Self {
        let (control, commands) = mpsc::channel();
        let (report, diagnostics) = mpsc::channel();
        let frames = Arc::new(FrameQueue::new(capacity));
        let queue = Arc::clone(&frames);
        let worker = thread::Builder::new()
            .name("olia-sampler".into())
            .spawn(move || sample_loop(emulator, commands, queue, report))
            .expect("spawn sampler thread");
        Self { control, frames, diagnostics, worker: Some(worker) }
    }

    /// Queues a command line; it is applied at the next sample boundary.
    pub fn send_line(&self, line: &str) {
        let _ = self.control.send(Control::Line(line.to_string()));
    }

    pub fn command_sender(&self) -> CommandSender {
        CommandSender(self.control.clone())
    }

    pub fn frames(&self) -> &Arc<FrameQueue> {
        &self.frames
    }

    /// Diagnostics produced since the last call.
    pub fn diagnostics(&self) -> Vec<String> {
        self.diagnostics.try_iter().collect()
    }

    /// Stops the loop and returns the emulator in its final state.
    pub fn shutdown(mut self) -> Emulator {
        self.stop().expect("sampler thread present until shutdown")
    }

    fn stop(&mut self) -> Option<Emulator> {
        let _ = self.control.send(Control::Shutdown);
        let emulator = self.worker.take().map(|w| w.join().expect("sampler thread panicked"));
        self.frames.close();
        emulator
    }
}

impl Drop for Device {
    fn drop(&mut self) {
        self.stop();
    }
}

fn sample_loop(
    mut emulator: Emulator,
    commands: Receiver<Control>,
    frames: Arc<FrameQueue>,
    report: Sender<String>,
) -> Emulator {
    let real_time = emulator.config().clock == ClockMode::RealTime;
    let start = Instant::now();
    let t0 = emulator.time();
    let mut pending = Vec::new();
    loop {
        // commands are applied only here, between frames' worth of samples
        loop {
            match commands.try_recv() {
                Ok(Control::Line(line)) => pending.push(line),
                Ok(Control::Shutdown) | Err(TryRecvError::Disconnected) => return emulator,
                Err(TryRecvError::Empty) => break,
            }
        }
        for line in pending.drain(..) {
            let _ = emulator.apply_line(&line);
        }
        for message in emulator.take_diagnostics() {
            let _ = report.send(message);
        }
        let (time, frame) = emulator.next_frame();
        if real_time {
            let due = start + Duration::from_secs_f64((time - t0).max(0.0));
            while let Some(wait) = due.checked_duration_since(Instant::now()) {
                match commands.recv_timeout(wait) {
                    Ok(Control::Line(line)) => pending.push(line),
                    Ok(Control::Shutdown) | Err(mpsc::RecvTimeoutError::Disconnected) => return emulator,
                    Err(mpsc::RecvTimeoutError::Timeout) => break,
                }
            }
        }
        frames.push(TimedFrame { time, frame });
    }
}
