use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub wall_ms: u64,
    pub max_output_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitKind {
    Code(i32),
    Signal(i32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub stdout: String,
    pub stderr: String,
    pub exit: ExitKind,
    pub timed_out: bool,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
    pub duration_ms: u64,
}

impl RunResult {
    /// Exited normally with status 0, within limits and with complete output.
    pub fn is_clean(&self) -> bool {
        !self.timed_out
            && !self.stdout_truncated
            && !self.stderr_truncated
            && self.exit == ExitKind::Code(0)
    }
}

/// Runs `cmd` in its own process group, feeding `stdin` and then closing it.
///
/// The whole group is killed at the wall-clock deadline and again after the main
/// process exits, so no descendant outlives the call.
pub(crate) fn run_limited(mut cmd: Command, stdin: &str, limits: Limits) -> io::Result<RunResult> {
    cmd.stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pgid = child.id() as libc::pid_t;

    let mut child_stdin = child.stdin.take().expect("stdin is piped");
    let input = stdin.as_bytes().to_vec();
    let writer = thread::spawn(move || {
        // The program may exit without reading everything; a broken pipe is fine.
        let _ = child_stdin.write_all(&input);
    });
    let out_reader = spawn_capped_reader(child.stdout.take().expect("stdout is piped"), limits.max_output_bytes);
    let err_reader = spawn_capped_reader(child.stderr.take().expect("stderr is piped"), limits.max_output_bytes);

    let deadline = start + Duration::from_millis(limits.wall_ms);
    let (status, timed_out) = wait_until(&mut child, pgid, deadline)?;
    kill_group(pgid);

    let _ = writer.join();
    let (stdout, stdout_truncated) = out_reader.join().unwrap_or_default();
    let (stderr, stderr_truncated) = err_reader.join().unwrap_or_default();
    let duration_ms = start.elapsed().as_millis() as u64;

    let exit = match (status.code(), status.signal()) {
        (Some(code), _) => ExitKind::Code(code),
        (None, Some(sig)) => ExitKind::Signal(sig),
        (None, None) => ExitKind::Signal(libc::SIGKILL),
    };
    Ok(RunResult {
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        exit,
        timed_out,
        stdout_truncated,
        stderr_truncated,
        duration_ms,
    })
}

fn wait_until(
    child: &mut Child,
    pgid: libc::pid_t,
    deadline: Instant,
) -> io::Result<(std::process::ExitStatus, bool)> {
    let mut backoff = Duration::from_micros(500);
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status, false));
        }
        let now = Instant::now();
        if now >= deadline {
            kill_group(pgid);
            let status = child.wait()?;
            return Ok((status, true));
        }
        thread::sleep(backoff.min(deadline - now));
        backoff = (backoff * 2).min(Duration::from_millis(10));
    }
}

fn kill_group(pgid: libc::pid_t) {
    // SAFETY: killpg only sends a signal; ESRCH for an empty group is ignored.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn spawn_capped_reader<R: Read + Send + 'static>(
    mut pipe: R,
    cap: usize,
) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut chunk = [0u8; 8192];
        loop {
            match pipe.read(&mut chunk) {
                Ok(0) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&chunk[..n.min(room)]);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        (kept, truncated)
    })
}
