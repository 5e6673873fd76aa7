//! Platform profiles: the contract that makes the execution module swappable.
//!
//! A profile declares which physical step kinds a robot body supports, plus
//! the capability flags the simulator and prompt assembly care about.
//! Swapping platforms means swapping this declaration; nothing upstream of
//! the execution module changes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::step::{StepKind, LOCOMOTION_KINDS, PHYSICAL_KINDS};

/// Identity and physical capabilities of one robot platform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotProfile {
    pub robot_id: String,
    pub platform_name: String,
    /// Enabled physical kinds; always a subset of [`PHYSICAL_KINDS`].
    pub actions: BTreeSet<StepKind>,
    /// Free text injected into the capabilities section of prompts.
    #[serde(default)]
    pub capabilities_note: String,
    #[serde(default)]
    pub has_basket: bool,
    #[serde(default)]
    pub has_gripper: bool,
    #[serde(default)]
    pub can_locomote: bool,
}

impl RobotProfile {
    /// Quadruped with gripper and carry basket: supports every physical kind.
    pub fn quadruped(robot_id: impl Into<String>) -> RobotProfile {
        RobotProfile {
            robot_id: robot_id.into(),
            platform_name: "quadruped with gripper and basket".to_string(),
            actions: PHYSICAL_KINDS.iter().copied().collect(),
            capabilities_note: "Mobile platform. Can carry one object in the gripper and \
                                several in the basket."
                .to_string(),
            has_basket: true,
            has_gripper: true,
            can_locomote: true,
        }
    }

    /// Static six-degree-of-freedom arm with a two-finger gripper. Excludes
    /// exactly the locomotion kinds.
    pub fn arm(robot_id: impl Into<String>) -> RobotProfile {
        let locomotion: BTreeSet<StepKind> = LOCOMOTION_KINDS.iter().copied().collect();
        RobotProfile {
            robot_id: robot_id.into(),
            platform_name: "static manipulator arm with gripper".to_string(),
            actions: PHYSICAL_KINDS
                .iter()
                .copied()
                .filter(|k| !locomotion.contains(k))
                .collect(),
            capabilities_note: "Fixed in place at its mounting point. Can manipulate objects \
                                within reach."
                .to_string(),
            has_basket: false,
            has_gripper: true,
            can_locomote: false,
        }
    }

    /// Looks up a built-in platform preset by name.
    pub fn preset(name: &str, robot_id: &str) -> Option<RobotProfile> {
        match name {
            "quadruped" => Some(RobotProfile::quadruped(robot_id)),
            "arm" => Some(RobotProfile::arm(robot_id)),
            _ => None,
        }
    }

    /// Action names in closed-set declaration order, for prompt text.
    pub fn action_names(&self) -> Vec<&'static str> {
        PHYSICAL_KINDS
            .iter()
            .filter(|k| self.actions.contains(k))
            .map(|k| k.name())
            .collect()
    }
}
