//! Child-process plumbing for local execution: spawning executable task
//! bodies, polling them, and killing them without leaving zombies.

use std::io;
use std::process::{Child, Command, Stdio};

use crate::task::{DurationSpec, TaskDescription};

/// Spawn the process behind an executable task. Bodies are modeled, so the
/// command comes from the duration: a no-op for Null, `sleep` otherwise.
/// No shell is involved.
pub fn spawn_body(desc: &TaskDescription) -> io::Result<Child> {
    let mut cmd = match desc.duration {
        DurationSpec::Null => Command::new("true"),
        DurationSpec::Sleep(s) => {
            let mut c = Command::new("sleep");
            c.arg(format!("{s}"));
            c
        }
    };
    cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
    cmd.spawn()
}

/// Non-blocking exit check; `Some(true)` means exited cleanly.
pub fn poll_exit(child: &mut Child) -> io::Result<Option<bool>> {
    Ok(child.try_wait()?.map(|status| status.success()))
}

/// Kill and reap, ignoring already-dead errors.
pub fn kill_quiet(child: &mut Child) {
    let _ = child.kill();
    let _ = child.wait();
}
