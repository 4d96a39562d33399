//! The cleaning-table task as a deterministic MDP.
//!
//! A single arm moves between the left and right halves of a table and a home
//! position. A sponge rests at home whenever it is not held; a goblet stands on
//! one half of the table and must be moved out of the way so both halves can be
//! wiped. The episode ends successfully once both halves are clean, the sponge
//! is back at home and the hand is free.
//!
//! Transition rules (anything that breaks one ends the episode in a failed
//! state with reward `-1`):
//!
//! * `GoLeft` / `GoRight` / `GoHome` always succeed and carry whatever is held.
//! * `Grasp` needs a free hand. At home it picks up the sponge; on a side it
//!   picks up the goblet, which must be standing there.
//! * `Place` needs something in hand. The sponge can only be put back at home;
//!   the goblet can only be put down on a side.
//! * `Wipe` needs the sponge in hand, the arm on a side and the goblet not
//!   standing on that side. It marks the side clean.
//! * `Abort` restores the episode's initial state.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Reward for reaching the final state.
pub const REWARD_DONE: f64 = 1.0;
/// Reward for entering a failed state.
pub const REWARD_FAILED: f64 = -1.0;
/// Reward for every other transition.
pub const REWARD_STEP: f64 = -0.01;

/// Length of the one-hot state code.
pub const STATE_CODE_LEN: usize = 13;
/// Length of the one-hot action code.
pub const ACTION_CODE_LEN: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandObject {
    Free,
    Sponge,
    Goblet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Left,
    Right,
    Home,
}

/// Where the goblet is. `InHand` exactly when the hand holds the goblet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GobletPlace {
    Left,
    Right,
    InHand,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SideCondition {
    pub left_clean: bool,
    pub right_clean: bool,
}

impl SideCondition {
    pub const DIRTY: SideCondition = SideCondition {
        left_clean: false,
        right_clean: false,
    };
    pub const CLEAN: SideCondition = SideCondition {
        left_clean: true,
        right_clean: true,
    };

    pub fn both_clean(self) -> bool {
        self.left_clean && self.right_clean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorldState {
    pub hand_object: HandObject,
    pub hand_position: Location,
    pub goblet: GobletPlace,
    pub sides: SideCondition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    GoLeft,
    GoRight,
    GoHome,
    Grasp,
    Place,
    Wipe,
    Abort,
}

impl Action {
    /// Every action in the fixed order used for indexing and tie-breaking.
    pub const ALL: [Action; 7] = [
        Action::GoLeft,
        Action::GoRight,
        Action::GoHome,
        Action::Grasp,
        Action::Place,
        Action::Wipe,
        Action::Abort,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::GoLeft => "go_left",
            Action::GoRight => "go_right",
            Action::GoHome => "go_home",
            Action::Grasp => "grasp",
            Action::Place => "place",
            Action::Wipe => "wipe",
            Action::Abort => "abort",
        }
    }

    pub fn one_hot(self) -> [f64; ACTION_CODE_LEN] {
        let mut code = [0.0; ACTION_CODE_LEN];
        code[self.index()] = 1.0;
        code
    }

    /// Left/right mirror image of the action.
    pub fn mirrored(self) -> Action {
        match self {
            Action::GoLeft => Action::GoRight,
            Action::GoRight => Action::GoLeft,
            other => other,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        Action::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| Error::Parse(format!("unknown action `{s}`")))
    }
}

impl Location {
    pub fn mirrored(self) -> Location {
        match self {
            Location::Left => Location::Right,
            Location::Right => Location::Left,
            Location::Home => Location::Home,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl GobletPlace {
    fn on(side: Location) -> Option<GobletPlace> {
        match side {
            Location::Left => Some(GobletPlace::Left),
            Location::Right => Some(GobletPlace::Right),
            Location::Home => None,
        }
    }

    pub fn mirrored(self) -> GobletPlace {
        match self {
            GobletPlace::Left => GobletPlace::Right,
            GobletPlace::Right => GobletPlace::Left,
            GobletPlace::InHand => GobletPlace::InHand,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// The result of a single transition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "state")]
pub enum Next {
    State(WorldState),
    Failed,
    Done,
}

impl Next {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Next::State(_))
    }

    pub fn state(&self) -> Option<WorldState> {
        match self {
            Next::State(s) => Some(*s),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub next: Next,
    pub reward: f64,
}

impl Transition {
    fn to(state: WorldState) -> Transition {
        if state.is_final() {
            Transition {
                next: Next::Done,
                reward: REWARD_DONE,
            }
        } else {
            Transition {
                next: Next::State(state),
                reward: REWARD_STEP,
            }
        }
    }

    const FAILED: Transition = Transition {
        next: Next::Failed,
        reward: REWARD_FAILED,
    };
}

impl WorldState {
    /// Starting configuration with the goblet on `goblet_side`.
    pub fn initial(goblet_side: Location) -> Result<WorldState, Error> {
        let goblet = GobletPlace::on(goblet_side).ok_or(Error::GobletAtHome)?;
        Ok(WorldState {
            hand_object: HandObject::Free,
            hand_position: Location::Home,
            goblet,
            sides: SideCondition::DIRTY,
        })
    }

    pub fn is_final(&self) -> bool {
        self.hand_object == HandObject::Free
            && self.hand_position == Location::Home
            && self.sides.both_clean()
    }

    /// Whether the fields agree with each other (goblet in hand iff held).
    pub fn is_consistent(&self) -> bool {
        (self.goblet == GobletPlace::InHand) == (self.hand_object == HandObject::Goblet)
    }

    /// Left/right mirror image of the state.
    pub fn mirrored(&self) -> WorldState {
        WorldState {
            hand_object: self.hand_object,
            hand_position: self.hand_position.mirrored(),
            goblet: self.goblet.mirrored(),
            sides: SideCondition {
                left_clean: self.sides.right_clean,
                right_clean: self.sides.left_clean,
            },
        }
    }

    /// 13-component code: hand object (3), hand position (3), goblet (3) and
    /// the side condition as one of dirty-dirty, dirty-clean, clean-dirty,
    /// clean-clean (4), left side first.
    pub fn one_hot(&self) -> [f64; STATE_CODE_LEN] {
        let mut code = [0.0; STATE_CODE_LEN];
        code[self.hand_object as usize] = 1.0;
        code[3 + self.hand_position.index()] = 1.0;
        code[6 + self.goblet.index()] = 1.0;
        code[9 + 2 * usize::from(self.sides.left_clean) + usize::from(self.sides.right_clean)] = 1.0;
        code
    }

    /// Inverse of [`WorldState::one_hot`] for exact codes. Each group must hold
    /// a single 1 and zeros elsewhere.
    pub fn from_one_hot(code: &[f64]) -> Option<WorldState> {
        if code.len() != STATE_CODE_LEN {
            return None;
        }
        let pick = |range: std::ops::Range<usize>| -> Option<usize> {
            let group = &code[range];
            let ones: Vec<usize> = (0..group.len()).filter(|&i| group[i] == 1.0).collect();
            let zeros = group.iter().filter(|&&v| v == 0.0).count();
            (ones.len() == 1 && zeros == group.len() - 1).then(|| ones[0])
        };
        let hand_object = [HandObject::Free, HandObject::Sponge, HandObject::Goblet][pick(0..3)?];
        let hand_position = [Location::Left, Location::Right, Location::Home][pick(3..6)?];
        let goblet = [GobletPlace::Left, GobletPlace::Right, GobletPlace::InHand][pick(6..9)?];
        let side_code = pick(9..13)?;
        let sides = SideCondition {
            left_clean: side_code >= 2,
            right_clean: side_code % 2 == 1,
        };
        Some(WorldState {
            hand_object,
            hand_position,
            goblet,
            sides,
        })
    }
}

impl fmt::Display for WorldState {
    /// Canonical short form, e.g. `free|home|right|DD`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hand = match self.hand_object {
            HandObject::Free => "free",
            HandObject::Sponge => "sponge",
            HandObject::Goblet => "goblet",
        };
        let pos = match self.hand_position {
            Location::Left => "left",
            Location::Right => "right",
            Location::Home => "home",
        };
        let goblet = match self.goblet {
            GobletPlace::Left => "left",
            GobletPlace::Right => "right",
            GobletPlace::InHand => "hand",
        };
        let side = |clean: bool| if clean { 'C' } else { 'D' };
        write!(
            f,
            "{hand}|{pos}|{goblet}|{}{}",
            side(self.sides.left_clean),
            side(self.sides.right_clean)
        )
    }
}

impl FromStr for WorldState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Parse(format!("malformed state `{s}`"));
        let parts: Vec<&str> = s.trim().split('|').collect();
        let [hand, pos, goblet, sides] = parts.as_slice() else {
            return Err(bad());
        };
        let hand_object = match *hand {
            "free" => HandObject::Free,
            "sponge" => HandObject::Sponge,
            "goblet" => HandObject::Goblet,
            _ => return Err(bad()),
        };
        let hand_position = match *pos {
            "left" => Location::Left,
            "right" => Location::Right,
            "home" => Location::Home,
            _ => return Err(bad()),
        };
        let goblet = match *goblet {
            "left" => GobletPlace::Left,
            "right" => GobletPlace::Right,
            "hand" => GobletPlace::InHand,
            _ => return Err(bad()),
        };
        let flag = |c: char| match c {
            'C' => Ok(true),
            'D' => Ok(false),
            _ => Err(bad()),
        };
        let mut chars = sides.chars();
        let (Some(l), Some(r), None) = (chars.next(), chars.next(), chars.next()) else {
            return Err(bad());
        };
        let state = WorldState {
            hand_object,
            hand_position,
            goblet,
            sides: SideCondition {
                left_clean: flag(l)?,
                right_clean: flag(r)?,
            },
        };
        if !state.is_consistent() {
            return Err(bad());
        }
        Ok(state)
    }
}

/// Applies `action` in `state`. `origin` is the goblet side the current
/// episode started from; only `Abort` looks at it.
pub fn step(state: &WorldState, action: Action, origin: Location) -> Transition {
    let s = *state;
    match action {
        Action::GoLeft => Transition::to(WorldState {
            hand_position: Location::Left,
            ..s
        }),
        Action::GoRight => Transition::to(WorldState {
            hand_position: Location::Right,
            ..s
        }),
        Action::GoHome => Transition::to(WorldState {
            hand_position: Location::Home,
            ..s
        }),
        Action::Grasp => {
            if s.hand_object != HandObject::Free {
                return Transition::FAILED;
            }
            match s.hand_position {
                Location::Home => Transition::to(WorldState {
                    hand_object: HandObject::Sponge,
                    ..s
                }),
                side if GobletPlace::on(side) == Some(s.goblet) => Transition::to(WorldState {
                    hand_object: HandObject::Goblet,
                    goblet: GobletPlace::InHand,
                    ..s
                }),
                _ => Transition::FAILED,
            }
        }
        Action::Place => match (s.hand_object, s.hand_position) {
            (HandObject::Free, _) => Transition::FAILED,
            (HandObject::Sponge, Location::Home) => Transition::to(WorldState {
                hand_object: HandObject::Free,
                ..s
            }),
            (HandObject::Sponge, _) => Transition::FAILED,
            (HandObject::Goblet, side) => match GobletPlace::on(side) {
                Some(goblet) => Transition::to(WorldState {
                    hand_object: HandObject::Free,
                    goblet,
                    ..s
                }),
                None => Transition::FAILED,
            },
        },
        Action::Wipe => {
            let side = s.hand_position;
            let on_side = GobletPlace::on(side);
            if s.hand_object != HandObject::Sponge || on_side.is_none() || on_side == Some(s.goblet) {
                return Transition::FAILED;
            }
            let mut sides = s.sides;
            match side {
                Location::Left => sides.left_clean = true,
                _ => sides.right_clean = true,
            }
            Transition::to(WorldState { sides, ..s })
        }
        Action::Abort => Transition {
            next: Next::State(
                WorldState::initial(origin).expect("episode origin is always a table side"),
            ),
            reward: REWARD_STEP,
        },
    }
}

/// Every non-terminal state reachable from the two initial states, in
/// breadth-first discovery order, with a lookup from state to index.
#[derive(Clone, Debug)]
pub struct StateSpace {
    states: Vec<WorldState>,
    index: HashMap<WorldState, usize>,
}

impl StateSpace {
    pub fn enumerate() -> StateSpace {
        let origins = [Location::Left, Location::Right];
        let mut states = Vec::new();
        let mut index = HashMap::new();
        let mut seen = std::collections::HashSet::new();
        let mut queue = VecDeque::new();
        for origin in origins {
            let s = WorldState::initial(origin).expect("table side");
            seen.insert((s, origin));
            queue.push_back((s, origin));
        }
        while let Some((s, origin)) = queue.pop_front() {
            if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(s) {
                slot.insert(states.len());
                states.push(s);
            }
            for a in Action::ALL {
                if let Next::State(n) = step(&s, a, origin).next {
                    if seen.insert((n, origin)) {
                        queue.push_back((n, origin));
                    }
                }
            }
        }
        StateSpace { states, index }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[WorldState] {
        &self.states
    }

    pub fn index_of(&self, s: &WorldState) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn get(&self, i: usize) -> Option<WorldState> {
        self.states.get(i).copied()
    }
}

/// Greedy policy of the true MDP, obtained by value iteration.
#[derive(Clone, Debug)]
pub struct OptimalPolicy {
    actions: HashMap<WorldState, Action>,
    values: HashMap<WorldState, [f64; 7]>,
}

impl OptimalPolicy {
    /// Runs value iteration with discount `gamma` until the largest update
    /// falls below 1e-12.
    pub fn solve(space: &StateSpace, gamma: f64) -> OptimalPolicy {
        let n = space.len();
        // Abort sends the agent back to an initial state; both initial states
        // have the same value by symmetry, so the left one stands in for both.
        let restart = space
            .index_of(&WorldState::initial(Location::Left).expect("table side"))
            .expect("initial state enumerated");
        let mut v = vec![0.0_f64; n];
        let q_of = |v: &[f64], i: usize| -> [f64; 7] {
            let s = space.states[i];
            let mut q = [0.0; 7];
            for a in Action::ALL {
                let t = step(&s, a, Location::Left);
                let next_value = match (a, t.next) {
                    (Action::Abort, _) => v[restart],
                    (_, Next::State(ns)) => v[space.index[&ns]],
                    _ => 0.0,
                };
                q[a.index()] = t.reward + gamma * next_value;
            }
            q
        };
        loop {
            let mut delta = 0.0_f64;
            for i in 0..n {
                let best = q_of(&v, i).into_iter().fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[i]).abs());
                v[i] = best;
            }
            if delta < 1e-12 {
                break;
            }
        }
        let mut actions = HashMap::with_capacity(n);
        let mut values = HashMap::with_capacity(n);
        for (i, s) in space.states.iter().enumerate() {
            let q = q_of(&v, i);
            actions.insert(*s, Action::ALL[argmax(&q)]);
            values.insert(*s, q);
        }
        OptimalPolicy { actions, values }
    }

    pub fn action(&self, s: &WorldState) -> Option<Action> {
        self.actions.get(s).copied()
    }

    /// Optimal action values for `s`, indexed by [`Action::index`].
    pub fn q_values(&self, s: &WorldState) -> Option<[f64; 7]> {
        self.values.get(s).copied()
    }
}

/// Index of the first maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
