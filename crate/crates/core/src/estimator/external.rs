//! Estimator running in a child process, spoken to over line-delimited JSON.
//!
//! Request:  `{"id":1,"satellite":"/tmp/s.pgm","thermal":"/tmp/t.pgm","iterations":6}`
//! Response: `{"id":1,"displacements":[[[dx1,..,dx4],[dy1,..,dy4]], ...],"variance":null}`
//!
//! One response line per request, in order. A response of the form
//! `{"id":..,"error":"..."}` or any line that does not match the schema is a
//! protocol error.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{check_schedule, EstimateTrajectory, HomographyEstimator, ViewPair};
use crate::error::{Error, Result};
use crate::geometry::Displacement;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRequest {
    pub id: u64,
    pub satellite: String,
    pub thermal: String,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolResponse {
    pub id: u64,
    pub displacements: Vec<[[f64; 4]; 2]>,
    pub variance: Option<[[f64; 4]; 2]>,
}

impl ProtocolRequest {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

impl ProtocolResponse {
    /// Parse and validate one response line against the request it answers.
    pub fn parse(line: &str, expect_id: u64, iterations: usize) -> Result<Self> {
        if line.ends_with(char::is_whitespace) {
            return Err(Error::Protocol("trailing whitespace in response".into()));
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Protocol(format!("malformed response {line:?}: {e}")))?;
        if let Some(msg) = value.get("error") {
            return Err(Error::Protocol(format!("estimator reported error: {msg}")));
        }
        let resp: ProtocolResponse = serde_json::from_value(value)
            .map_err(|e| Error::Protocol(format!("response schema: {e}")))?;
        if resp.id != expect_id {
            return Err(Error::Protocol(format!(
                "response id {} for request {expect_id}",
                resp.id
            )));
        }
        if resp.displacements.len() != iterations {
            return Err(Error::Protocol(format!(
                "{} displacements for {iterations} iterations",
                resp.displacements.len()
            )));
        }
        let finite = resp
            .displacements
            .iter()
            .flatten()
            .flatten()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Protocol("non-finite displacement".into()));
        }
        if let Some(var) = &resp.variance {
            if !var.iter().flatten().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(Error::Protocol(
                    "variance must be finite and non-negative".into(),
                ));
            }
        }
        Ok(resp)
    }

    pub fn into_trajectory(self) -> Result<EstimateTrajectory> {
        let mut t =
            EstimateTrajectory::new(self.displacements.into_iter().map(Displacement).collect())?;
        t.variance = self.variance.map(Displacement);
        Ok(t)
    }
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

/// One child process; calls are serialized through a mutex, so concurrent
/// workers should each spawn their own.
pub struct ExternalEstimator {
    command: String,
    conn: Mutex<Connection>,
    scratch: tempfile::TempDir,
    files: AtomicU64,
}

impl ExternalEstimator {
    /// Spawn `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("cannot spawn {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            command: command.to_string(),
            conn: Mutex::new(Connection {
                child,
                stdin,
                stdout,
                next_id: 1,
            }),
            scratch: tempfile::tempdir()?,
            files: AtomicU64::new(0),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn scratch_dir(&self) -> &Path {
        self.scratch.path()
    }

    /// Send a raw request for images already on disk.
    pub fn request(
        &self,
        satellite: &Path,
        thermal: &Path,
        iterations: usize,
    ) -> Result<EstimateTrajectory> {
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| Error::Protocol("connection poisoned".into()))?;
        let id = conn.next_id;
        conn.next_id += 1;
        let req = ProtocolRequest {
            id,
            satellite: satellite.to_string_lossy().into_owned(),
            thermal: thermal.to_string_lossy().into_owned(),
            iterations,
        };
        let io_err = |e: std::io::Error| Error::Protocol(format!("estimator pipe: {e}"));
        writeln!(conn.stdin, "{}", req.to_line()).map_err(io_err)?;
        conn.stdin.flush().map_err(io_err)?;
        let mut line = String::new();
        let n = conn.stdout.read_line(&mut line).map_err(io_err)?;
        if n == 0 {
            return Err(Error::Protocol("estimator closed its output".into()));
        }
        let line = line.strip_suffix('\n').unwrap_or(&line);
        ProtocolResponse::parse(line, id, iterations)?.into_trajectory()
    }

    fn view_paths(&self, id: u64) -> (PathBuf, PathBuf) {
        (
            self.scratch.path().join(format!("sat_{id}.pgm")),
            self.scratch.path().join(format!("thermal_{id}.pgm")),
        )
    }
}

impl HomographyEstimator for ExternalEstimator {
    fn name(&self) -> &str {
        "external"
    }

    fn estimate_schedule(
        &self,
        pair: &ViewPair<'_>,
        planned: usize,
        run: usize,
    ) -> Result<EstimateTrajectory> {
        check_schedule(planned, run)?;
        pair.validate()?;
        let (sp, tp) = self.view_paths(self.files.fetch_add(1, Ordering::Relaxed));
        pair.satellite.write_pgm(&sp)?;
        pair.thermal.write_pgm(&tp)?;
        let out = self.request(&sp, &tp, run);
        let _ = std::fs::remove_file(&sp);
        let _ = std::fs::remove_file(&tp);
        out
    }
}

impl Drop for ExternalEstimator {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            let _ = conn.child.kill();
            let _ = conn.child.wait();
        }
    }
}
