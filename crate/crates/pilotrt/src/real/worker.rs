//! Body of the `pilotrt-worker` binary: a single-task-at-a-time function
//! server speaking the framed protocol on stdin/stdout. Function bodies run
//! in-process; a healthy worker never spawns a child, and the shutdown
//! response reports its spawn count so the pool can audit that.

use std::io::{self, Write};
use std::time::Duration;

use super::wire::{read_frame, write_frame, Request, Response};

/// Serve requests until `shutdown` or EOF; returns the process exit code.
pub fn worker_main() -> i32 {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut reader = stdin.lock();
    let mut writer = stdout.lock();
    // Count of child processes this worker has spawned. Function execution
    // is in-process by design, so this stays 0; it exists to prove that.
    let spawned = 0u32;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return 0,
            Err(_) => return 1,
        };
        let Some(req) = Request::parse(&frame) else {
            // Unparseable frame: no uid to route a reply to, so bail.
            return 1;
        };
        let resp = match req.kind.as_str() {
            "ping" => Response::ok(&req.uid, "pong"),
            "noop" => Response::ok(&req.uid, ""),
            "sleep" => match req.args.parse::<f64>() {
                Ok(s) if s >= 0.0 && s.is_finite() => {
                    std::thread::sleep(Duration::from_secs_f64(s));
                    Response::ok(&req.uid, "")
                }
                _ => Response::err(&req.uid, &format!("bad sleep args `{}`", req.args)),
            },
            "fail" => Response::err(&req.uid, &req.args),
            "shutdown" => {
                let resp = Response::ok(&req.uid, &format!("spawned={spawned}"));
                let _ = write_frame(&mut writer, &resp.encode());
                let _ = writer.flush();
                return 0;
            }
            other => Response::err(&req.uid, &format!("unknown kind `{other}`")),
        };
        if write_frame(&mut writer, &resp.encode()).is_err() {
            return 1;
        }
    }
}
