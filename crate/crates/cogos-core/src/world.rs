//! Simulated environment: a place graph with objects, users, and robot
//! states, standing in for the physical world during desk-scale runs.
//!
//! Every action is atomic: all preconditions are checked before any state
//! changes, so a failing action leaves the world serialization untouched.
//! There is no physics or timing model; navigation is place-graph
//! reachability and object handling is carrier bookkeeping.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::step::{BehaviorStep, StepKind};

/// Where an object currently is: resting at a place or carried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    Place { name: String },
    Gripper { robot: String },
    Basket { robot: String },
    User { user: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: u64,
    pub label: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub location: Placement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Standing,
    Sitting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotState {
    pub robot_id: String,
    pub location: String,
    pub posture: Posture,
    /// Holds at most one object.
    pub gripper: Option<u64>,
    /// Insertion order; delivery takes from the front.
    pub basket: Vec<u64>,
    pub has_gripper: bool,
    pub has_basket: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    #[serde(default)]
    pub adjacent: Vec<String>,
    /// Optional camera image for vision-backend perception.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Success,
    Failure,
}

/// Result of one physical action. On failure the world is unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub status: ActionStatus,
    pub message: String,
    pub world_delta: String,
}

impl ActionOutcome {
    fn success(message: impl Into<String>, delta: impl Into<String>) -> ActionOutcome {
        ActionOutcome {
            status: ActionStatus::Success,
            message: message.into(),
            world_delta: delta.into(),
        }
    }

    fn failure(message: impl Into<String>) -> ActionOutcome {
        ActionOutcome {
            status: ActionStatus::Failure,
            message: message.into(),
            world_delta: "none".to_string(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status == ActionStatus::Success
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("world io at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("world parse error: {reason}")]
    Parse { reason: String },
    #[error("world invariant violated for {subject}: {reason}")]
    InvariantViolation { subject: String, reason: String },
}

/// One world shared by multiple robot loops; the mutex is the mutation
/// queue that gives actions a total order.
pub type SharedWorld = std::sync::Arc<tokio::sync::Mutex<World>>;

#[derive(Debug, Clone, Serialize)]
pub struct World {
    locations: BTreeMap<String, Location>,
    objects: BTreeMap<u64, ObjectInstance>,
    users: BTreeMap<String, String>,
    robots: BTreeMap<String, RobotState>,
    seed: u64,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// On-disk world file shape.
#[derive(Debug, Deserialize)]
struct WorldFile {
    #[serde(default)]
    locations: Vec<WorldFileLocation>,
    #[serde(default)]
    objects: Vec<WorldFileObject>,
    #[serde(default)]
    users: Vec<WorldFileUser>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct WorldFileLocation {
    name: String,
    #[serde(default)]
    adjacent: Vec<String>,
    #[serde(default)]
    image: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WorldFileObject {
    id: u64,
    label: String,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
    location: String,
}

#[derive(Debug, Deserialize)]
struct WorldFileUser {
    id: String,
    location: String,
}

impl World {
    pub fn load(path: &Path) -> Result<World, WorldError> {
        let data = std::fs::read_to_string(path).map_err(|e| WorldError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if data.trim().is_empty() {
            return Err(WorldError::Parse {
                reason: "empty world file".to_string(),
            });
        }
        let file: WorldFile = serde_json::from_str(&data).map_err(|e| WorldError::Parse {
            reason: e.to_string(),
        })?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        World::from_file(file, base_dir)
    }

    fn from_file(file: WorldFile, base_dir: PathBuf) -> Result<World, WorldError> {
        let mut builder = WorldBuilder::new().seed(file.seed);
        for loc in file.locations {
            builder = builder.location_with_image(
                &loc.name,
                &loc.adjacent.iter().map(String::as_str).collect::<Vec<_>>(),
                loc.image,
            );
        }
        for obj in file.objects {
            builder = builder.object_with_id(obj.id, &obj.label, obj.attributes, &obj.location);
        }
        for user in file.users {
            builder = builder.user(&user.id, &user.location);
        }
        let mut world = builder.build()?;
        world.base_dir = base_dir;
        Ok(world)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn locations(&self) -> &BTreeMap<String, Location> {
        &self.locations
    }

    pub fn objects(&self) -> &BTreeMap<u64, ObjectInstance> {
        &self.objects
    }

    pub fn users(&self) -> &BTreeMap<String, String> {
        &self.users
    }

    pub fn robots(&self) -> &BTreeMap<String, RobotState> {
        &self.robots
    }

    pub fn robot(&self, robot_id: &str) -> Option<&RobotState> {
        self.robots.get(robot_id)
    }

    /// Registers a robot at a start location. The location must exist and
    /// the id must be new.
    pub fn add_robot(
        &mut self,
        robot_id: &str,
        start_location: &str,
        has_gripper: bool,
        has_basket: bool,
    ) -> Result<(), WorldError> {
        if self.robots.contains_key(robot_id) {
            return Err(WorldError::InvariantViolation {
                subject: format!("robot `{robot_id}`"),
                reason: "duplicate robot id".to_string(),
            });
        }
        if !self.locations.contains_key(start_location) {
            return Err(WorldError::InvariantViolation {
                subject: format!("robot `{robot_id}`"),
                reason: format!("start location `{start_location}` unknown"),
            });
        }
        self.robots.insert(
            robot_id.to_string(),
            RobotState {
                robot_id: robot_id.to_string(),
                location: start_location.to_string(),
                posture: Posture::Standing,
                gripper: None,
                basket: Vec::new(),
                has_gripper,
                has_basket,
            },
        );
        Ok(())
    }

    /// The place an object currently occupies, following its carrier.
    pub fn place_of_object(&self, object: &ObjectInstance) -> Option<String> {
        match &object.location {
            Placement::Place { name } => Some(name.clone()),
            Placement::Gripper { robot } | Placement::Basket { robot } => {
                self.robots.get(robot).map(|r| r.location.clone())
            }
            Placement::User { user } => self.users.get(user).cloned(),
        }
    }

    /// Camera image path for a robot's current location, if the world
    /// fixture declares one.
    pub fn image_for_robot(&self, robot_id: &str) -> Option<PathBuf> {
        let robot = self.robots.get(robot_id)?;
        let image = self.locations.get(&robot.location)?.image.as_ref()?;
        Some(self.base_dir.join(image))
    }

    fn undirected_neighbors(&self, place: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if let Some(loc) = self.locations.get(place) {
            out.extend(loc.adjacent.iter().cloned());
        }
        for (name, loc) in &self.locations {
            if loc.adjacent.iter().any(|a| a == place) {
                out.insert(name.clone());
            }
        }
        out
    }

    /// Hop count between two places over the (undirected) adjacency graph.
    fn hops(&self, from: &str, to: &str) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(from.to_string());
        queue.push_back((from.to_string(), 0usize));
        while let Some((place, d)) = queue.pop_front() {
            for next in self.undirected_neighbors(&place) {
                if next == to {
                    return Some(d + 1);
                }
                if seen.insert(next.clone()) {
                    queue.push_back((next, d + 1));
                }
            }
        }
        None
    }

    /// Canonical serialization (sorted keys) for golden comparisons.
    pub fn dump_canonical(&self) -> String {
        serde_json::to_string_pretty(self).expect("world serializes")
    }

    /// Immutable view of what a robot can currently see: objects and users
    /// at its location, sorted by id. An object is visible iff it resolves
    /// to the robot's place, including objects carried by co-located
    /// robots and users (flagged with their carrier).
    pub fn snapshot(&self, robot_id: &str) -> Option<Snapshot> {
        let robot = self.robots.get(robot_id)?;
        let place = robot.location.clone();
        let mut objects: Vec<VisibleObject> = self
            .objects
            .values()
            .filter(|o| self.place_of_object(o).as_deref() == Some(place.as_str()))
            .map(|o| VisibleObject {
                id: o.id,
                label: o.label.clone(),
                attributes: o.attributes.clone(),
                held_by: match &o.location {
                    Placement::Place { .. } => None,
                    Placement::Gripper { robot } => Some(robot.clone()),
                    Placement::Basket { robot } => Some(format!("{robot}'s basket")),
                    Placement::User { user } => Some(user.clone()),
                },
            })
            .collect();
        objects.sort_by_key(|o| o.id);
        let users: Vec<String> = self
            .users
            .iter()
            .filter(|(_, loc)| **loc == place)
            .map(|(uid, _)| uid.clone())
            .collect();
        Some(Snapshot {
            place,
            objects,
            users,
        })
    }

    /// Executes one physical step for `robot_id`. Never panics: all
    /// failures come back as `ActionOutcome` with the world unchanged.
    /// SAY and LISTEN are routed through the communication bus by the
    /// execution module, not here.
    pub fn execute(&mut self, step: &BehaviorStep, robot_id: &str) -> ActionOutcome {
        if !self.robots.contains_key(robot_id) {
            return ActionOutcome::failure(format!("robot `{robot_id}` is not in this world"));
        }
        match step.kind() {
            StepKind::GoTo => self.act_go_to(robot_id, step.arg(0)),
            StepKind::GoUser => self.act_go_user(robot_id),
            StepKind::Sit => self.act_posture(robot_id, Posture::Sitting),
            StepKind::Up => self.act_posture(robot_id, Posture::Standing),
            StepKind::Turn => {
                ActionOutcome::success(format!("turned {}", step.arg(0)), "none")
            }
            StepKind::Tilt => {
                ActionOutcome::success(format!("tilted {}", step.arg(0)), "none")
            }
            StepKind::Dance => ActionOutcome::success("performed a short dance", "none"),
            StepKind::Follow => ActionOutcome::success(
                format!("following {} (no effect in the place graph)", step.arg(0)),
                "none",
            ),
            StepKind::Take => self.act_take(robot_id, step.arg(0)),
            StepKind::PutIn => self.act_put_in(robot_id, step.arg(0), step.arg(1)),
            StepKind::GiveToUser => self.act_give_to_user(robot_id),
            other => ActionOutcome::failure(format!(
                "{other} is not executed by the world simulator"
            )),
        }
    }

    fn act_go_to(&mut self, robot_id: &str, dest: &str) -> ActionOutcome {
        let from = self.robots[robot_id].location.clone();
        let target = if self.locations.contains_key(dest) {
            dest.to_string()
        } else if let Some(loc) = self.users.get(dest) {
            loc.clone()
        } else if let Some(obj) = self.resolve_object_ref(dest) {
            match self.place_of_object(obj) {
                Some(place) => place,
                None => {
                    return ActionOutcome::failure(format!(
                        "cannot locate `{dest}` anywhere reachable"
                    ))
                }
            }
        } else {
            return ActionOutcome::failure(format!(
                "place `{dest}` unknown (not a place, user, or object reference)"
            ));
        };
        if target == from {
            return ActionOutcome::success(format!("already at {target}"), "none");
        }
        if self.hops(&from, &target).is_none() {
            return ActionOutcome::failure(format!("no path from {from} to {target}"));
        }
        self.robots.get_mut(robot_id).unwrap().location = target.clone();
        ActionOutcome::success(
            format!("moved from {from} to {target}"),
            format!("robot {robot_id}: {from} -> {target}"),
        )
    }

    fn act_go_user(&mut self, robot_id: &str) -> ActionOutcome {
        let from = self.robots[robot_id].location.clone();
        let nearest = self
            .users
            .iter()
            .filter_map(|(uid, loc)| self.hops(&from, loc).map(|d| (d, uid.clone(), loc.clone())))
            .min(); // (hops, user id) — ties resolve to the smallest user id
        let Some((_, user, target)) = nearest else {
            return ActionOutcome::failure("no reachable user".to_string());
        };
        if target == from {
            return ActionOutcome::success(format!("already with {user} at {target}"), "none");
        }
        self.robots.get_mut(robot_id).unwrap().location = target.clone();
        ActionOutcome::success(
            format!("moved from {from} to {target}, joining {user}"),
            format!("robot {robot_id}: {from} -> {target}"),
        )
    }

    fn act_posture(&mut self, robot_id: &str, posture: Posture) -> ActionOutcome {
        let robot = self.robots.get_mut(robot_id).unwrap();
        let before = robot.posture;
        robot.posture = posture;
        let name = match posture {
            Posture::Sitting => "sitting",
            Posture::Standing => "standing",
        };
        let delta = if before == posture {
            "none".to_string()
        } else {
            format!("robot {robot_id}: posture -> {name}")
        };
        ActionOutcome::success(format!("posture: {name}"), delta)
    }

    /// Resolves `obj:<id>` references.
    fn resolve_object_ref(&self, reference: &str) -> Option<&ObjectInstance> {
        let id = reference.strip_prefix("obj:")?.parse::<u64>().ok()?;
        self.objects.get(&id)
    }

    /// Resolves an object argument for manipulation: `obj:<id>` or an exact
    /// label among the given candidates; label ties resolve to the lowest id.
    fn resolve_for_manipulation(&self, reference: &str, candidates: &[u64]) -> Option<u64> {
        if let Some(obj) = self.resolve_object_ref(reference) {
            return Some(obj.id);
        }
        candidates
            .iter()
            .copied()
            .filter(|id| self.objects[id].label == reference)
            .min()
    }

    fn act_take(&mut self, robot_id: &str, reference: &str) -> ActionOutcome {
        let robot = &self.robots[robot_id];
        if !robot.has_gripper {
            return ActionOutcome::failure(format!("robot {robot_id} has no gripper"));
        }
        if let Some(held) = robot.gripper {
            return ActionOutcome::failure(format!("gripper already holds object {held}"));
        }
        let here = robot.location.clone();
        // Reachable candidates: objects resting here, or in this robot's own basket.
        let candidates: Vec<u64> = self
            .objects
            .values()
            .filter(|o| match &o.location {
                Placement::Place { name } => *name == here,
                Placement::Basket { robot } => robot == robot_id,
                _ => false,
            })
            .map(|o| o.id)
            .collect();
        let Some(id) = self.resolve_for_manipulation(reference, &candidates) else {
            return ActionOutcome::failure(format!("no object matching `{reference}` here"));
        };
        if !candidates.contains(&id) {
            let obj = &self.objects[&id];
            return ActionOutcome::failure(format!(
                "object {id} ({}) is not within reach: {}",
                obj.label,
                describe_placement(&obj.location)
            ));
        }
        let label = self.objects[&id].label.clone();
        if let Placement::Basket { .. } = self.objects[&id].location {
            let robot = self.robots.get_mut(robot_id).unwrap();
            robot.basket.retain(|&b| b != id);
        }
        self.objects.get_mut(&id).unwrap().location = Placement::Gripper {
            robot: robot_id.to_string(),
        };
        self.robots.get_mut(robot_id).unwrap().gripper = Some(id);
        ActionOutcome::success(
            format!("took object {id} ({label}) into the gripper"),
            format!("object {id}: -> gripper of {robot_id}"),
        )
    }

    fn act_put_in(&mut self, robot_id: &str, obj_ref: &str, container: &str) -> ActionOutcome {
        let robot = &self.robots[robot_id];
        let Some(held) = robot.gripper else {
            return ActionOutcome::failure("gripper is empty".to_string());
        };
        let resolved = self.resolve_for_manipulation(obj_ref, &[held]);
        if resolved != Some(held) {
            let held_label = &self.objects[&held].label;
            return ActionOutcome::failure(format!(
                "not holding `{obj_ref}` (gripper holds object {held}, {held_label})"
            ));
        }
        let target_id = if container == "basket" {
            robot_id.to_string()
        } else if let Some(prefix) = container.strip_suffix("_basket") {
            prefix.to_string()
        } else {
            return ActionOutcome::failure(format!(
                "unknown container `{container}` (use `basket` or `<robot>_basket`)"
            ));
        };
        let Some(target) = self.robots.get(&target_id) else {
            return ActionOutcome::failure(format!("no robot `{target_id}` to receive the object"));
        };
        if !target.has_basket {
            return ActionOutcome::failure(format!("robot {target_id} has no basket"));
        }
        if target.location != self.robots[robot_id].location {
            return ActionOutcome::failure(format!(
                "robot {target_id} is at {}, not here",
                target.location
            ));
        }
        let label = self.objects[&held].label.clone();
        self.objects.get_mut(&held).unwrap().location = Placement::Basket {
            robot: target_id.clone(),
        };
        self.robots.get_mut(robot_id).unwrap().gripper = None;
        self.robots.get_mut(&target_id).unwrap().basket.push(held);
        ActionOutcome::success(
            format!("placed object {held} ({label}) into {target_id}'s basket"),
            format!("object {held}: gripper of {robot_id} -> basket of {target_id}"),
        )
    }

    fn act_give_to_user(&mut self, robot_id: &str) -> ActionOutcome {
        let robot = &self.robots[robot_id];
        let here = robot.location.clone();
        let Some(user) = self
            .users
            .iter()
            .filter(|(_, loc)| **loc == here)
            .map(|(uid, _)| uid.clone())
            .next()
        else {
            return ActionOutcome::failure(format!("no user at {here}"));
        };
        let (id, from_gripper) = if let Some(held) = robot.gripper {
            (held, true)
        } else if let Some(&first) = robot.basket.first() {
            (first, false)
        } else {
            return ActionOutcome::failure("nothing to give (gripper and basket empty)".to_string());
        };
        let label = self.objects[&id].label.clone();
        let robot = self.robots.get_mut(robot_id).unwrap();
        if from_gripper {
            robot.gripper = None;
        } else {
            robot.basket.retain(|&b| b != id);
        }
        self.objects.get_mut(&id).unwrap().location = Placement::User { user: user.clone() };
        ActionOutcome::success(
            format!("gave object {id} ({label}) to {user}"),
            format!("object {id}: -> {user}"),
        )
    }
}

/// One object as seen from a robot's position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: u64,
    pub label: String,
    pub attributes: BTreeMap<String, String>,
    /// Carrier description when the object is held rather than resting
    /// (`dog`, `dog's basket`, `user_1`).
    pub held_by: Option<String>,
}

/// Immutable visibility snapshot; later world mutations do not affect it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub place: String,
    pub objects: Vec<VisibleObject>,
    pub users: Vec<String>,
}

fn describe_placement(p: &Placement) -> String {
    match p {
        Placement::Place { name } => format!("at {name}"),
        Placement::Gripper { robot } => format!("in {robot}'s gripper"),
        Placement::Basket { robot } => format!("in {robot}'s basket"),
        Placement::User { user } => format!("carried by {user}"),
    }
}

/// Programmatic world construction, mirroring the world-file validation.
#[derive(Debug, Default)]
pub struct WorldBuilder {
    locations: Vec<(String, Vec<String>, Option<String>)>,
    objects: Vec<(u64, String, BTreeMap<String, String>, String)>,
    users: Vec<(String, String)>,
    seed: u64,
}

impl WorldBuilder {
    pub fn new() -> WorldBuilder {
        WorldBuilder::default()
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn location(self, name: &str, adjacent: &[&str]) -> Self {
        self.location_with_image(name, adjacent, None)
    }

    pub fn location_with_image(
        mut self,
        name: &str,
        adjacent: &[&str],
        image: Option<String>,
    ) -> Self {
        self.locations.push((
            name.to_string(),
            adjacent.iter().map(|s| s.to_string()).collect(),
            image,
        ));
        self
    }

    pub fn object(self, label: &str, attributes: &[(&str, &str)], place: &str) -> Self {
        let id = self.objects.iter().map(|(id, ..)| id + 1).max().unwrap_or(0);
        let attrs = attributes
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        self.object_with_id(id, label, attrs, place)
    }

    pub fn object_with_id(
        mut self,
        id: u64,
        label: &str,
        attributes: BTreeMap<String, String>,
        place: &str,
    ) -> Self {
        self.objects
            .push((id, label.to_string(), attributes, place.to_string()));
        self
    }

    pub fn user(mut self, id: &str, place: &str) -> Self {
        self.users.push((id.to_string(), place.to_string()));
        self
    }

    pub fn build(self) -> Result<World, WorldError> {
        let mut locations = BTreeMap::new();
        for (name, adjacent, image) in self.locations {
            if locations
                .insert(name.clone(), Location { adjacent, image })
                .is_some()
            {
                return Err(WorldError::InvariantViolation {
                    subject: format!("location `{name}`"),
                    reason: "duplicate location name".to_string(),
                });
            }
        }
        for (name, loc) in &locations {
            for adj in &loc.adjacent {
                if !locations.contains_key(adj) {
                    return Err(WorldError::InvariantViolation {
                        subject: format!("location `{name}`"),
                        reason: format!("adjacent place `{adj}` unknown"),
                    });
                }
            }
        }
        let mut objects = BTreeMap::new();
        for (id, label, attributes, place) in self.objects {
            if !locations.contains_key(&place) {
                return Err(WorldError::InvariantViolation {
                    subject: format!("object {id} ({label})"),
                    reason: format!("location `{place}` unknown"),
                });
            }
            let previous = objects.insert(
                id,
                ObjectInstance {
                    id,
                    label: label.clone(),
                    attributes,
                    location: Placement::Place { name: place },
                },
            );
            if previous.is_some() {
                return Err(WorldError::InvariantViolation {
                    subject: format!("object {id} ({label})"),
                    reason: "duplicate object id".to_string(),
                });
            }
        }
        let mut users = BTreeMap::new();
        for (id, place) in self.users {
            if !locations.contains_key(&place) {
                return Err(WorldError::InvariantViolation {
                    subject: format!("user `{id}`"),
                    reason: format!("location `{place}` unknown"),
                });
            }
            if users.insert(id.clone(), place).is_some() {
                return Err(WorldError::InvariantViolation {
                    subject: format!("user `{id}`"),
                    reason: "duplicate user id".to_string(),
                });
            }
        }
        Ok(World {
            locations,
            objects,
            users,
            robots: BTreeMap::new(),
            seed: self.seed,
            base_dir: PathBuf::from("."),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::step::parse_step;

    fn kitchen_world() -> World {
        let mut world = WorldBuilder::new()
            .location("dock", &["table"])
            .location("table", &["dock", "kitchen"])
            .location("kitchen", &[])
            .object("cola can", &[("color", "red"), ("class", "drink")], "table")
            .object(
                "orange juice can",
                &[("color", "orange"), ("class", "drink")],
                "table",
            )
            .user("user_1", "dock")
            .build()
            .unwrap();
        world.add_robot("dog", "dock", true, true).unwrap();
        world.add_robot("arm", "table", true, false).unwrap();
        world
    }

    fn run(world: &mut World, robot: &str, line: &str) -> ActionOutcome {
        world.execute(&parse_step(line).unwrap(), robot)
    }

    #[test]
    fn go_to_moves_along_reachable_places() {
        let mut w = kitchen_world();
        let out = run(&mut w, "dog", "GO_TO(kitchen)");
        assert!(out.succeeded(), "{}", out.message);
        assert_eq!(w.robot("dog").unwrap().location, "kitchen");
        // Unknown place fails and leaves the world unchanged.
        let before = w.dump_canonical();
        let out = run(&mut w, "dog", "GO_TO(attic)");
        assert!(!out.succeeded());
        assert!(out.message.contains("attic"));
        assert_eq!(w.dump_canonical(), before);
    }

    #[test]
    fn go_to_resolves_users_and_object_refs() {
        let mut w = kitchen_world();
        assert!(run(&mut w, "dog", "GO_TO(user_1)").succeeded());
        assert_eq!(w.robot("dog").unwrap().location, "dock");
        assert!(run(&mut w, "dog", "GO_TO(obj:1)").succeeded());
        assert_eq!(w.robot("dog").unwrap().location, "table");
    }

    #[test]
    fn take_requires_colocation_and_empty_gripper() {
        let mut w = kitchen_world();
        // Not co-located yet.
        let out = run(&mut w, "dog", "TAKE(cola can)");
        assert!(!out.succeeded());
        run(&mut w, "dog", "GO_TO(table)");
        let out = run(&mut w, "dog", "TAKE(cola can)");
        assert!(out.succeeded(), "{}", out.message);
        assert_eq!(w.robot("dog").unwrap().gripper, Some(0));
        let before = w.dump_canonical();
        let out = run(&mut w, "dog", "TAKE(orange juice can)");
        assert!(!out.succeeded());
        assert!(out.message.contains("already holds object 0"));
        assert_eq!(w.dump_canonical(), before);
    }

    #[test]
    fn take_resolves_label_ties_by_lowest_id() {
        let mut w = WorldBuilder::new()
            .location("room", &[])
            .object("can", &[], "room")
            .object("can", &[], "room")
            .build()
            .unwrap();
        w.add_robot("r", "room", true, false).unwrap();
        assert!(run(&mut w, "r", "TAKE(can)").succeeded());
        assert_eq!(w.robot("r").unwrap().gripper, Some(0));
    }

    #[test]
    fn put_in_moves_object_to_other_robots_basket() {
        let mut w = kitchen_world();
        run(&mut w, "dog", "GO_TO(table)");
        assert!(run(&mut w, "arm", "TAKE(orange juice can)").succeeded());
        let out = run(&mut w, "arm", r#"PUT_IN("orange juice can", dog_basket)"#);
        assert!(out.succeeded(), "{}", out.message);
        assert_eq!(w.robot("dog").unwrap().basket, vec![1]);
        assert_eq!(w.robot("arm").unwrap().gripper, None);
        assert_eq!(
            w.objects()[&1].location,
            Placement::Basket {
                robot: "dog".to_string()
            }
        );
    }

    #[test]
    fn put_in_rejects_missing_basket_and_distance() {
        let mut w = kitchen_world();
        run(&mut w, "dog", "GO_TO(table)");
        run(&mut w, "dog", "TAKE(cola can)");
        // Arm has no basket.
        let out = run(&mut w, "dog", r#"PUT_IN("cola can", arm_basket)"#);
        assert!(!out.succeeded());
        assert!(out.message.contains("no basket"));
        // Receiver must be co-located.
        run(&mut w, "dog", "GO_TO(kitchen)");
        let out = run(&mut w, "dog", r#"PUT_IN("cola can", dog_basket)"#);
        assert!(out.succeeded(), "own basket travels with the robot");
        let out = run(&mut w, "dog", r#"PUT_IN("cola can", dog_basket)"#);
        assert!(!out.succeeded(), "gripper is now empty");
    }

    #[test]
    fn give_to_user_prefers_gripper_then_basket() {
        let mut w = kitchen_world();
        run(&mut w, "dog", "GO_TO(table)");
        run(&mut w, "dog", "TAKE(orange juice can)");
        run(&mut w, "dog", r#"PUT_IN("orange juice can", basket)"#);
        run(&mut w, "dog", "TAKE(cola can)");
        run(&mut w, "dog", "GO_TO(dock)");
        let out = run(&mut w, "dog", "GIVE_TO_USER");
        assert!(out.succeeded());
        assert_eq!(
            w.objects()[&0].location,
            Placement::User {
                user: "user_1".to_string()
            }
        );
        let out = run(&mut w, "dog", "GIVE_TO_USER");
        assert!(out.succeeded());
        assert_eq!(
            w.objects()[&1].location,
            Placement::User {
                user: "user_1".to_string()
            }
        );
        let out = run(&mut w, "dog", "GIVE_TO_USER");
        assert!(!out.succeeded());
    }

    #[test]
    fn give_requires_user_present() {
        let mut w = kitchen_world();
        run(&mut w, "dog", "GO_TO(table)");
        run(&mut w, "dog", "TAKE(cola can)");
        let out = run(&mut w, "dog", "GIVE_TO_USER");
        assert!(!out.succeeded());
        assert!(out.message.contains("no user at table"));
    }

    #[test]
    fn posture_and_noop_motions_succeed() {
        let mut w = kitchen_world();
        assert!(run(&mut w, "dog", "SIT").succeeded());
        assert_eq!(w.robot("dog").unwrap().posture, Posture::Sitting);
        assert!(run(&mut w, "dog", "UP").succeeded());
        assert!(run(&mut w, "dog", "DANCE").succeeded());
        assert!(run(&mut w, "dog", "TURN(left)").succeeded());
        assert!(run(&mut w, "dog", "TILT(down)").succeeded());
        assert!(run(&mut w, "dog", "FOLLOW(user_1)").succeeded());
    }

    #[test]
    fn go_user_picks_nearest_then_lowest_id() {
        let mut w = WorldBuilder::new()
            .location("a", &["b"])
            .location("b", &["c"])
            .location("c", &[])
            .user("user_2", "b")
            .user("user_1", "b")
            .user("user_3", "c")
            .build()
            .unwrap();
        w.add_robot("r", "a", false, false).unwrap();
        let out = run(&mut w, "r", "GO_USER");
        assert!(out.succeeded());
        assert_eq!(w.robot("r").unwrap().location, "b");
        assert!(out.message.contains("user_1"), "{}", out.message);
    }

    #[test]
    fn snapshot_lists_colocated_objects_and_users_by_id() {
        let mut w = kitchen_world();
        run(&mut w, "dog", "GO_TO(table)");
        let snap = w.snapshot("dog").unwrap();
        assert_eq!(snap.place, "table");
        assert_eq!(snap.objects.len(), 2);
        assert_eq!(snap.objects[0].id, 0);
        assert_eq!(snap.objects[1].id, 1);
        assert!(snap.users.is_empty());
        let dock_snap = w.snapshot("arm").map(|s| s.users.clone());
        assert_eq!(dock_snap, Some(vec![]));
    }

    #[test]
    fn empty_room_yields_empty_snapshot() {
        let mut w = WorldBuilder::new().location("void", &[]).build().unwrap();
        w.add_robot("r", "void", false, false).unwrap();
        let snap = w.snapshot("r").unwrap();
        assert!(snap.objects.is_empty());
        assert!(snap.users.is_empty());
    }

    #[test]
    fn taken_object_stays_visible_flagged_held() {
        let mut w = kitchen_world();
        run(&mut w, "dog", "GO_TO(table)");
        run(&mut w, "dog", "TAKE(cola can)");
        let snap = w.snapshot("dog").unwrap();
        let held = snap.objects.iter().find(|o| o.id == 0).unwrap();
        assert_eq!(held.held_by.as_deref(), Some("dog"));
        // The snapshot is a value: later mutation leaves it untouched.
        run(&mut w, "dog", "GO_TO(dock)");
        assert_eq!(snap.place, "table");
        assert_eq!(snap.objects.len(), 2);
    }

    #[test]
    fn builder_rejects_invariant_violations() {
        let err = WorldBuilder::new()
            .location("a", &[])
            .object("ghost", &[], "nowhere")
            .build()
            .unwrap_err();
        assert!(matches!(err, WorldError::InvariantViolation { .. }));
        assert!(err.to_string().contains("ghost"));

        let err = WorldBuilder::new()
            .location("a", &["missing"])
            .build()
            .unwrap_err();
        assert!(matches!(err, WorldError::InvariantViolation { .. }));
    }

    #[test]
    fn load_rejects_empty_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.world");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            World::load(&path),
            Err(WorldError::Parse { .. })
        ));
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(
            World::load(&path),
            Err(WorldError::Parse { .. })
        ));
    }

    #[test]
    fn object_multiset_is_conserved_and_single_carrier_holds() {
        let mut w = kitchen_world();
        let initial_ids: Vec<u64> = w.objects().keys().copied().collect();
        let script = [
            ("dog", "GO_TO(table)"),
            ("arm", "TAKE(orange juice can)"),
            ("arm", r#"PUT_IN("orange juice can", dog_basket)"#),
            ("dog", "TAKE(cola can)"),
            ("dog", "GO_TO(dock)"),
            ("dog", "GIVE_TO_USER"),
            ("dog", "GIVE_TO_USER"),
        ];
        for (robot, line) in script {
            run(&mut w, robot, line);
            let ids: Vec<u64> = w.objects().keys().copied().collect();
            assert_eq!(ids, initial_ids, "object multiset changed after {line}");
            assert_single_carrier(&w);
        }
    }

    fn assert_single_carrier(w: &World) {
        for (id, obj) in w.objects() {
            let mut carriers = 0;
            for r in w.robots().values() {
                if r.gripper == Some(*id) {
                    carriers += 1;
                }
                carriers += r.basket.iter().filter(|&&b| b == *id).count();
            }
            match &obj.location {
                Placement::Gripper { .. } | Placement::Basket { .. } => {
                    assert_eq!(carriers, 1, "object {id} carrier bookkeeping out of sync")
                }
                _ => assert_eq!(carriers, 0, "object {id} has a stale carrier"),
            }
        }
    }
}
