//! Test harness for driving one backend instance with a private clock.

use crate::backend::{Backend, BackendActionKind, BackendEvent, SubmitError};
use crate::sim::SimClock;
use crate::task::TaskDescription;

pub struct Rig<B: Backend> {
    pub backend: B,
    pub clock: SimClock<BackendActionKind>,
    /// Timers left over from bootstrap (the startup timeout stays armed).
    baseline_pending: usize,
}

impl<B: Backend> Rig<B> {
    /// Boots the instance and drains the bootstrap timers.
    pub fn new(backend: B) -> Rig<B> {
        let mut rig = Rig { backend, clock: SimClock::new(), baseline_pending: 0 };
        rig.backend.begin_bootstrap(0.0, &mut rig.clock);
        rig.step_until_ready();
        rig.baseline_pending = rig.clock.pending();
        rig
    }

    /// Pending timers armed since the instance became ready.
    pub fn pending_work(&self) -> usize {
        self.clock.pending() - self.baseline_pending
    }

    /// Fire pending actions until the instance leaves BOOTING.
    fn step_until_ready(&mut self) {
        use crate::task::InstanceState;
        while self.backend.lifecycle() == InstanceState::Booting {
            let batch = self.clock.advance().expect("bootstrap timers pending");
            for kind in batch.actions {
                self.backend.handle_action(kind, batch.now, &mut self.clock);
            }
        }
    }

    /// Fire the next batch of timers, if any.
    pub fn step(&mut self) {
        if let Ok(batch) = self.clock.advance() {
            for kind in batch.actions {
                self.backend.handle_action(kind, batch.now, &mut self.clock);
            }
        }
    }

    /// Run the clock dry.
    pub fn drain(&mut self) {
        while let Ok(batch) = self.clock.advance() {
            for kind in batch.actions {
                self.backend.handle_action(kind, batch.now, &mut self.clock);
            }
        }
    }

    pub fn submit(&mut self, desc: &TaskDescription) -> Result<String, SubmitError> {
        let now = self.clock.now();
        self.backend.submit(desc, now, &mut self.clock)
    }

    pub fn events(&mut self) -> Vec<BackendEvent> {
        self.backend.poll_events(f64::INFINITY)
    }
}
