#![allow(dead_code)]

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use absdl_core::safety::Verdict;
use absdl_harness::config::ScenarioConfig;
use absdl_harness::service::{self, ServiceHandle, ServiceOptions, Source};
use absdl_harness::wire::{read_frame, write_frame, Envelope, WireError, WireMessage};
use absdl_core::sim::ManoeuvreKind;

pub fn start_live(cfg: &ScenarioConfig, kind: ManoeuvreKind, record_dir: Option<PathBuf>) -> ServiceHandle {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    service::start(cfg, listener, ServiceOptions { source: Source::Live(kind), record_dir }).unwrap()
}

pub fn start_with(cfg: &ScenarioConfig, source: Source) -> ServiceHandle {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    service::start(cfg, listener, ServiceOptions { source, record_dir: None }).unwrap()
}

/// Blocking test client with its own outgoing sequence counter.
pub struct Client {
    pub stream: TcpStream,
    seq: u64,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_nodelay(true).unwrap();
        Self { stream, seq: 0 }
    }

    /// Send `msg` and return its sequence number.
    pub fn send(&mut self, msg: WireMessage) -> u64 {
        self.seq += 1;
        write_frame(&mut self.stream, &Envelope::new(self.seq, msg)).unwrap();
        self.seq
    }

    pub fn recv(&mut self, timeout: Duration) -> Result<Envelope, WireError> {
        self.stream.set_read_timeout(Some(timeout)).unwrap();
        read_frame(&mut self.stream)
    }

    /// First message satisfying `pred` within `timeout`.
    pub fn wait_for<T>(&mut self, timeout: Duration, mut pred: impl FnMut(&WireMessage) -> Option<T>) -> T {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            assert!(!left.is_zero(), "timed out waiting for a matching message");
            let env = self.recv(left).expect("connection stays open");
            if let Some(v) = pred(&env.msg) {
                return v;
            }
        }
    }

    /// The reply (Ack or Error) to the message with sequence number `re`.
    pub fn reply_to(&mut self, re: u64) -> WireMessage {
        self.wait_for(Duration::from_secs(5), |m| match m {
            WireMessage::Ack { re: r, .. } if *r == re => Some(m.clone()),
            WireMessage::Error { re: Some(r), .. } if *r == re => Some(m.clone()),
            _ => None,
        })
    }

    pub fn next_state(&mut self) -> (f64, absdl_core::sim::WorldState, Verdict, bool) {
        self.wait_for(Duration::from_secs(5), |m| match m {
            WireMessage::StateUpdate { t, world, verdict, recording, .. } => Some((*t, *world, *verdict, *recording)),
            _ => None,
        })
    }
}

pub fn is_ack(m: &WireMessage) -> bool {
    matches!(m, WireMessage::Ack { .. })
}
