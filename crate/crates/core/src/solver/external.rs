//! File-based bridge to an external thermal solver.
//!
//! Before each run the bridge writes `server_id,α` records to the flow-rate file and the
//! operating state to the state file, both inside the working directory. It then runs the
//! command with the working directory as its last argument and reads `sensor_id,°C` records
//! from the output file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::ThermalSolver;
use crate::error::{Error, Result};
use crate::hall::{HallLayout, SensorRole, SensorVector, SystemInput};

fn default_flow_file() -> String {
    "flow_rates.csv".into()
}

fn default_state_file() -> String {
    "state.csv".into()
}

fn default_output_file() -> String {
    "sensors.csv".into()
}

fn default_timeout() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    /// Program followed by its leading arguments; the working directory is appended.
    pub command: Vec<String>,
    pub workdir: PathBuf,
    /// Flow-rate file name inside `workdir`.
    #[serde(default = "default_flow_file")]
    pub flow_file: String,
    #[serde(default = "default_state_file")]
    pub state_file: String,
    #[serde(default = "default_output_file")]
    pub output_file: String,
    /// Wall-clock cap per invocation, seconds.
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl ExternalConfig {
    pub fn new(command: Vec<String>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            command,
            workdir: workdir.into(),
            flow_file: default_flow_file(),
            state_file: default_state_file(),
            output_file: default_output_file(),
            timeout_secs: default_timeout(),
        }
    }
}

#[derive(Debug)]
pub struct ExternalSolver {
    config: ExternalConfig,
    crac_ids: Vec<String>,
    server_ids: Vec<String>,
    sensor_ids: Vec<String>,
    calls: usize,
    workdir_lock: Mutex<()>,
}

impl ExternalSolver {
    pub fn new(config: ExternalConfig, layout: &HallLayout) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::InvalidConfig(
                "external solver command is empty".into(),
            ));
        }
        if !(config.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig(
                "external solver timeout must be positive".into(),
            ));
        }
        Ok(Self {
            config,
            crac_ids: layout.cracs.iter().map(|c| c.id.clone()).collect(),
            server_ids: layout.servers.iter().map(|s| s.id.clone()).collect(),
            sensor_ids: layout.sensors.iter().map(|s| s.id.clone()).collect(),
            calls: 0,
            workdir_lock: Mutex::new(()),
        })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    fn path(&self, name: &str) -> PathBuf {
        self.config.workdir.join(name)
    }

    fn write_inputs(&self, x: &SystemInput) -> Result<()> {
        let mut flows = String::new();
        for (id, a) in self.server_ids.iter().zip(&x.flow_rates) {
            let _ = writeln!(flows, "{id},{a}");
        }
        let mut state = String::new();
        for (i, id) in self.crac_ids.iter().enumerate() {
            let _ = writeln!(
                state,
                "crac,{id},{},{}",
                x.crac_setpoints[i], x.crac_fan_speeds[i]
            );
        }
        for (id, p) in self.server_ids.iter().zip(&x.server_powers) {
            let _ = writeln!(state, "server,{id},{p}");
        }
        for id in &self.sensor_ids {
            let _ = writeln!(state, "sensor,{id}");
        }
        for (name, body) in [
            (&self.config.flow_file, flows),
            (&self.config.state_file, state),
        ] {
            let path = self.path(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn run(&self) -> Result<()> {
        let cfg = &self.config;
        let mut child = Command::new(&cfg.command[0])
            .args(&cfg.command[1..])
            .arg(&cfg.workdir)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::CommandFailed {
                status: "spawn failure".into(),
                stderr: e.to_string(),
            })?;
        let mut stderr_pipe = child.stderr.take().expect("stderr is piped");
        let reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr_pipe.read_to_string(&mut buf);
            buf
        });

        let cap = Duration::from_secs_f64(cfg.timeout_secs);
        let started = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if started.elapsed() >= cap => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(Error::Timeout {
                        seconds: cfg.timeout_secs,
                    });
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    return Err(Error::CommandFailed {
                        status: "wait failure".into(),
                        stderr: e.to_string(),
                    })
                }
            }
        };
        let stderr = reader.join().unwrap_or_default();
        if status.success() {
            Ok(())
        } else {
            Err(Error::CommandFailed {
                status: status.to_string(),
                stderr: stderr.trim().to_string(),
            })
        }
    }

    fn read_output(&self, path: &Path) -> Result<Vec<f64>> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::parse(path, 0, format!("cannot read solver output: {e}")))?;
        let index: HashMap<&str, usize> = self
            .sensor_ids
            .iter()
            .enumerate()
            .map(|(k, id)| (id.as_str(), k))
            .collect();
        let mut values = vec![None; self.sensor_ids.len()];
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, value) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, line_no, "expected `sensor_id,temperature`"))?;
            let k = *index.get(id.trim()).ok_or_else(|| {
                Error::parse(path, line_no, format!("unknown sensor `{}`", id.trim()))
            })?;
            let v: f64 = value.trim().parse().map_err(|_| {
                Error::parse(path, line_no, format!("bad temperature `{}`", value.trim()))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, "non-finite temperature"));
            }
            values[k] = Some(v);
        }
        values
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                v.ok_or_else(|| {
                    Error::parse(
                        path,
                        0,
                        format!("no temperature for sensor `{}`", self.sensor_ids[k]),
                    )
                })
            })
            .collect()
    }
}

impl ThermalSolver for ExternalSolver {
    fn solve(&mut self, x: &SystemInput) -> Result<SensorVector> {
        self.calls += 1;
        x.check_dims(self.crac_ids.len(), self.server_ids.len())?;
        x.check_flow_rates()?;
        let _guard = self.workdir_lock.lock().unwrap_or_else(|e| e.into_inner());
        let output = self.path(&self.config.output_file);
        if output.exists() {
            fs::remove_file(&output).map_err(|e| Error::io(&output, e))?;
        }
        self.write_inputs(x)?;
        self.run()?;
        let values = self.read_output(&output)?;
        Ok(SensorVector::new(values, SensorRole::SolverOutput))
    }

    fn calls(&self) -> usize {
        self.calls
    }
}
