//! Device power sampling and energy integration.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::str::FromStr;
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_MS: u64 = 1000;
const TRUNCATED_MARKER: &str = "# truncated";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Train,
    Inference,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Train => "train",
            Phase::Inference => "inference",
        })
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "inference" => Ok(Phase::Inference),
            other => Err(Error::Config(format!("unknown power phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample {
    pub timestamp_s: f64,
    pub power_watts: f64,
    pub phase: Phase,
}

/// Ordered power samples from one device. `truncated` marks a log whose
/// device stopped answering before the sampler was stopped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerLog {
    pub source: String,
    samples: Vec<PowerSample>,
    pub truncated: bool,
}

impl PowerLog {
    pub fn new(source: impl Into<String>) -> Self {
        PowerLog {
            source: source.into(),
            samples: Vec::new(),
            truncated: false,
        }
    }

    pub fn push(&mut self, sample: PowerSample) -> Result<()> {
        if !(sample.power_watts >= 0.0 && sample.power_watts.is_finite()) {
            return Err(Error::Numeric(format!("invalid power reading {}", sample.power_watts)));
        }
        if let Some(last) = self.samples.last() {
            if sample.timestamp_s <= last.timestamp_s {
                return Err(Error::Numeric(format!(
                    "timestamps must increase: {} after {}",
                    sample.timestamp_s, last.timestamp_s
                )));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[PowerSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.timestamp_s - a.timestamp_s,
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp_s,power_watts,phase\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.timestamp_s, s.power_watts, s.phase));
        }
        if self.truncated {
            out.push_str(TRUNCATED_MARKER);
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, source: impl Into<String>) -> Result<Self> {
        let mut log = PowerLog::new(source);
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == "timestamp_s,power_watts,phase" => {}
            _ => return Err(Error::Config("power log must start with the header timestamp_s,power_watts,phase".into())),
        }
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == TRUNCATED_MARKER {
                log.truncated = true;
                continue;
            }
            let bad = || Error::Config(format!("malformed power log line {}: {line:?}", i + 2));
            let mut f = line.split(',');
            let ts = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let w = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let phase = f.next().map(str::parse).transpose()?.unwrap_or_default();
            log.push(PowerSample {
                timestamp_s: ts,
                power_watts: w,
                phase,
            })?;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::File::create(path)?.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv(&text, path.display().to_string())
    }
}

/// Trapezoidal integral of power over time. Each interval counts toward the
/// phase of its starting sample, so phase energies sum to the total.
pub fn energy_joules(log: &PowerLog, phase: Option<Phase>) -> f64 {
    log.samples
        .windows(2)
        .filter(|w| phase.is_none_or(|p| w[0].phase == p))
        .map(|w| 0.5 * (w[0].power_watts + w[1].power_watts) * (w[1].timestamp_s - w[0].timestamp_s))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSummary {
    pub source: String,
    pub samples: usize,
    pub duration_s: f64,
    pub mean_watts: f64,
    pub energy_joules: f64,
    pub train_joules: f64,
    pub inference_joules: f64,
    pub truncated: bool,
}

pub fn summarize(log: &PowerLog) -> PowerSummary {
    let energy = energy_joules(log, None);
    let duration = log.duration_s();
    PowerSummary {
        source: log.source.clone(),
        samples: log.len(),
        duration_s: duration,
        mean_watts: if duration > 0.0 { energy / duration } else { 0.0 },
        energy_joules: energy,
        train_joules: energy_joules(log, Some(Phase::Train)),
        inference_joules: energy_joules(log, Some(Phase::Inference)),
        truncated: log.truncated,
    }
}

/// A device power counter. `None` means the device stopped answering.
pub trait PowerReader: Send {
    fn source(&self) -> String;
    fn read_watts(&mut self) -> Option<f64>;
}

/// Queries `nvidia-smi` for the board power draw of one GPU.
#[derive(Debug, Clone)]
pub struct NvidiaSmiReader {
    device: usize,
}

impl NvidiaSmiReader {
    /// Returns a reader only when a reading can actually be taken.
    pub fn probe(device: usize) -> Option<Self> {
        let mut r = NvidiaSmiReader { device };
        r.read_watts().map(|_| r)
    }
}

impl PowerReader for NvidiaSmiReader {
    fn source(&self) -> String {
        format!("nvidia-smi:{}", self.device)
    }

    fn read_watts(&mut self) -> Option<f64> {
        let out = Command::new("nvidia-smi")
            .args(["--query-gpu=power.draw", "--format=csv,noheader,nounits", "-i"])
            .arg(self.device.to_string())
            .output()
            .ok()?;
        if !out.status.success() {
            return None;
        }
        String::from_utf8_lossy(&out.stdout).trim().parse().ok()
    }
}

/// Replays the power column of a recorded log, then reports end of stream.
#[derive(Debug, Clone)]
pub struct ReplayReader {
    source: String,
    watts: std::vec::IntoIter<f64>,
}

impl ReplayReader {
    pub fn new(log: &PowerLog) -> Self {
        ReplayReader {
            source: format!("replay:{}", log.source),
            watts: log.samples.iter().map(|s| s.power_watts).collect::<Vec<_>>().into_iter(),
        }
    }
}

impl PowerReader for ReplayReader {
    fn source(&self) -> String {
        self.source.clone()
    }

    fn read_watts(&mut self) -> Option<f64> {
        self.watts.next()
    }
}

struct Shared {
    log: PowerLog,
    phase: Phase,
}

/// Background sampler appending one reading per interval.
pub struct PowerSampler {
    shared: Arc<Mutex<Shared>>,
    stop: Option<Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

impl PowerSampler {
    /// Starts sampling; with no reader the log stays empty.
    pub fn start(reader: Option<Box<dyn PowerReader>>, interval: Duration) -> Self {
        let source = reader.as_ref().map_or_else(|| "none".to_string(), |r| r.source());
        let shared = Arc::new(Mutex::new(Shared {
            log: PowerLog::new(source),
            phase: Phase::Train,
        }));
        let Some(mut reader) = reader else {
            log::warn!("no device power counter available; power log will be empty");
            return PowerSampler {
                shared,
                stop: None,
                handle: None,
            };
        };
        let (tx, rx) = mpsc::channel::<()>();
        let worker = Arc::clone(&shared);
        let handle = std::thread::spawn(move || {
            let origin = Instant::now();
            loop {
                let watts = reader.read_watts();
                let mut state = worker.lock().expect("sampler lock");
                let Some(w) = watts else {
                    state.log.truncated = true;
                    log::warn!("power counter stopped responding; log truncated");
                    break;
                };
                let sample = PowerSample {
                    timestamp_s: origin.elapsed().as_secs_f64(),
                    power_watts: w,
                    phase: state.phase,
                };
                if let Err(e) = state.log.push(sample) {
                    log::warn!("dropping power sample: {e}");
                }
                drop(state);
                match rx.recv_timeout(interval) {
                    Err(RecvTimeoutError::Timeout) => {}
                    _ => break,
                }
            }
        });
        PowerSampler {
            shared,
            stop: Some(tx),
            handle: Some(handle),
        }
    }

    /// Probes the GPU counter and starts sampling it if present.
    pub fn for_device(device: usize, interval: Duration) -> Self {
        let reader = NvidiaSmiReader::probe(device).map(|r| Box::new(r) as Box<dyn PowerReader>);
        Self::start(reader, interval)
    }

    pub fn set_phase(&self, phase: Phase) {
        self.shared.lock().expect("sampler lock").phase = phase;
    }

    /// Consistent copy of the log so far.
    pub fn snapshot(&self) -> PowerLog {
        self.shared.lock().expect("sampler lock").log.clone()
    }

    pub fn stop(mut self) -> PowerLog {
        self.halt();
        self.snapshot()
    }

    fn halt(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for PowerSampler {
    fn drop(&mut self) {
        self.halt();
    }
}
