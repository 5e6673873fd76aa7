//! On-robot physical action execution over the simulated platform.
//!
//! SAY and LISTEN go through the communication bus; every other physical
//! kind is a world transition. Replacing the platform means replacing this
//! module while keeping the step-result exchange format.

use std::sync::Arc;
use std::time::Duration;

use crate::bus::{Bus, ListenError};
use crate::step::{BehaviorStep, StepKind};
use crate::transcript::StepResult;
use crate::world::SharedWorld;

pub const EXECUTION_MODULE: &str = "execution";

pub struct SimExecutor {
    world: SharedWorld,
    bus: Arc<Bus>,
    listen_timeout: Duration,
}

impl SimExecutor {
    pub fn new(world: SharedWorld, bus: Arc<Bus>, listen_timeout: Duration) -> SimExecutor {
        SimExecutor {
            world,
            bus,
            listen_timeout,
        }
    }

    pub fn world(&self) -> &SharedWorld {
        &self.world
    }

    pub fn bus(&self) -> &Arc<Bus> {
        &self.bus
    }

    /// Executes one physical step for `robot_id`. All failures come back
    /// as failed step results; nothing panics or aborts the run.
    pub async fn execute(&self, step: &BehaviorStep, robot_id: &str) -> StepResult {
        match step.kind() {
            StepKind::Say => {
                let location = {
                    let world = self.world.lock().await;
                    world.robot(robot_id).map(|r| r.location.clone())
                };
                let Some(location) = location else {
                    return StepResult::failure(
                        EXECUTION_MODULE,
                        format!("robot `{robot_id}` is not in this world"),
                    );
                };
                let text = step.arg(0);
                if text.is_empty() {
                    return StepResult::failure(EXECUTION_MODULE, "nothing to say");
                }
                self.bus.say(robot_id, text, Some(&location));
                StepResult::success(EXECUTION_MODULE, format!("said: {text}"))
            }
            StepKind::Listen => match self.bus.listen(robot_id, self.listen_timeout).await {
                Ok(utterance) => {
                    let mut result = StepResult::success(
                        EXECUTION_MODULE,
                        format!("heard from {}: {}", utterance.speaker, utterance.text),
                    );
                    // Ground-truth memorization hook: what other parties
                    // said is worth remembering.
                    result.facts = vec![format!("{} said: {}", utterance.speaker, utterance.text)];
                    result
                }
                Err(ListenError::Timeout) => {
                    StepResult::failure(EXECUTION_MODULE, "heard nothing")
                }
                Err(e) => StepResult::failure(EXECUTION_MODULE, e.to_string()),
            },
            _ => {
                let mut world = self.world.lock().await;
                let outcome = world.execute(step, robot_id);
                if outcome.succeeded() {
                    if let Some(robot) = world.robot(robot_id) {
                        // Keep bus audibility in sync after moves.
                        self.bus.set_location(robot_id, &robot.location);
                    }
                }
                let status_message = outcome.message.clone();
                if outcome.succeeded() {
                    StepResult::success(EXECUTION_MODULE, status_message)
                } else {
                    StepResult::failure(EXECUTION_MODULE, status_message)
                }
            }
        }
    }
}
