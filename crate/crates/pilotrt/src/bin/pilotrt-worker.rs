//! Worker process for the local pool backend: serves framed function
//! requests on stdin/stdout until told to shut down.

fn main() {
    std::process::exit(pilotrt::real::worker::worker_main());
}
