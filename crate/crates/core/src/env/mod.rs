//! Procedurally generated, level-seeded grid games.
//!
//! Every level of a game shares the same dynamics. Levels differ in wall
//! layout, entity placement and palette (background hue, a static background
//! speckle pattern, and three tile hues), so a policy that keys on colors or
//! memorized layouts does not transfer to unseen levels.
//!
//! * `collector`: pick up every fruit (+1 each, dense); stepping on a hazard
//!   ends the episode.
//! * `corridor`: reach the exit (+10, sparse) through a random maze of walls.

mod levels;
mod render;
mod scripted;
mod vec_env;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub use levels::{split_levels, LevelSet, LevelSplit};
pub use render::{write_png, Palette};
pub use scripted::{greedy_action, random_action};
pub use vec_env::{EpisodeEnd, VecEnv, VecStep};

pub const NUM_ACTIONS: usize = 5;
pub const ACTION_NOOP: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameId {
    Collector,
    Corridor,
}

impl GameId {
    pub const ALL: [GameId; 2] = [GameId::Collector, GameId::Corridor];

    pub fn name(self) -> &'static str {
        match self {
            GameId::Collector => "collector",
            GameId::Corridor => "corridor",
        }
    }

    /// Largest achievable episode return.
    pub fn max_return(self, cfg: &EnvConfig) -> f64 {
        match self {
            GameId::Collector => cfg.fruits as f64 * cfg.fruit_reward,
            GameId::Corridor => cfg.exit_reward,
        }
    }
}

impl fmt::Display for GameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GameId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "collector" => Ok(GameId::Collector),
            "corridor" => Ok(GameId::Corridor),
            other => Err(Error::Config(format!("unknown game `{other}`"))),
        }
    }
}

/// Identity of one level: `(game, index)` fully determines it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelSeed {
    pub game: GameId,
    pub index: u64,
    pub seed: u64,
}

impl LevelSeed {
    pub fn new(game: GameId, index: u64) -> Self {
        let seed = derive_seed(derive_seed(0x6d69_7872_6567, game.name()), &index.to_string());
        Self { game, index, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub game: GameId,
    /// Observation side length in pixels (square, 3 channels).
    pub obs_size: usize,
    /// Grid side length in cells; `obs_size` must be a multiple of it.
    pub grid: usize,
    pub horizon: u32,
    /// Level indices are drawn from `0..universe`.
    pub universe: u64,
    pub fruits: usize,
    pub hazards: usize,
    pub collector_walls: usize,
    pub fruit_reward: f64,
    /// Fraction of corridor cells that are walls.
    pub corridor_wall_density: f64,
    pub exit_reward: f64,
    /// Fraction of background pixels drawn in the alternate background color.
    pub speckle_density: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            game: GameId::Collector,
            obs_size: 32,
            grid: 8,
            horizon: 256,
            universe: 1_000_000,
            fruits: 4,
            hazards: 2,
            collector_walls: 10,
            fruit_reward: 1.0,
            corridor_wall_density: 0.35,
            exit_reward: 10.0,
            speckle_density: 0.15,
        }
    }
}

impl EnvConfig {
    pub fn for_game(game: GameId) -> Self {
        Self {
            game,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid < 4 {
            return bad(format!("grid must be at least 4, got {}", self.grid));
        }
        if self.obs_size == 0 || self.obs_size % self.grid != 0 {
            return bad(format!(
                "obs_size {} must be a positive multiple of grid {}",
                self.obs_size, self.grid
            ));
        }
        if self.obs_size / self.grid < 2 {
            return bad("cells must be at least 2 pixels wide".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.universe < 2 {
            return bad("level universe must hold at least 2 levels".into());
        }
        let cells = self.grid * self.grid;
        if self.game == GameId::Collector && self.fruits + self.hazards + self.collector_walls + 1 > cells {
            return bad("collector entities do not fit in the grid".into());
        }
        if self.fruits == 0 && self.game == GameId::Collector {
            return bad("collector needs at least one fruit".into());
        }
        if !(0.0..0.9).contains(&self.corridor_wall_density) {
            return bad("corridor wall density must be in [0, 0.9)".into());
        }
        if !(0.0..=1.0).contains(&self.speckle_density) {
            return bad("speckle density must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn obs_shape(&self) -> [usize; 3] {
        [3, self.obs_size, self.obs_size]
    }

    pub fn obs_len(&self) -> usize {
        3 * self.obs_size * self.obs_size
    }

    pub fn cell_px(&self) -> usize {
        self.obs_size / self.grid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Empty,
    Wall,
    Fruit,
    Hazard,
    Exit,
}

/// Full state of one environment instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub level: LevelSeed,
    pub grid: usize,
    pub cells: Vec<Cell>,
    pub agent: (usize, usize),
    pub steps: u32,
    pub horizon: u32,
    pub done: bool,
    pub fruits_left: usize,
    pub palette: Palette,
    /// Static per-level background pattern, one flag per pixel.
    pub speckle: Vec<bool>,
    fruit_reward: f64,
    exit_reward: f64,
    obs_size: usize,
}

const MAX_ATTEMPTS: u32 = 64;

/// Cells reachable from `start` through cells accepted by `passable`.
pub(crate) fn flood_fill(
    grid: usize,
    start: (usize, usize),
    passable: impl Fn(usize) -> bool,
) -> Vec<Option<u32>> {
    let mut dist = vec![None; grid * grid];
    let s = start.0 * grid + start.1;
    dist[s] = Some(0);
    let mut q = VecDeque::from([start]);
    while let Some((r, c)) = q.pop_front() {
        let d = dist[r * grid + c].unwrap();
        for (nr, nc) in neighbours(grid, r, c) {
            let i = nr * grid + nc;
            if dist[i].is_none() && passable(i) {
                dist[i] = Some(d + 1);
                q.push_back((nr, nc));
            }
        }
    }
    dist
}

pub(crate) fn neighbours(grid: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut v = Vec::with_capacity(4);
    if r > 0 {
        v.push((r - 1, c));
    }
    if r + 1 < grid {
        v.push((r + 1, c));
    }
    if c > 0 {
        v.push((r, c - 1));
    }
    if c + 1 < grid {
        v.push((r, c + 1));
    }
    v.into_iter()
}

fn sample_cells(rng: &mut Rng, pool: &mut Vec<usize>, n: usize) -> Option<Vec<usize>> {
    if pool.len() < n {
        return None;
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(k));
    }
    Some(out)
}

fn try_layout(cfg: &EnvConfig, rng: &mut Rng) -> Option<(Vec<Cell>, (usize, usize))> {
    let g = cfg.grid;
    let mut cells = vec![Cell::Empty; g * g];
    let mut free: Vec<usize> = (0..g * g).collect();
    let n_walls = match cfg.game {
        GameId::Collector => cfg.collector_walls,
        GameId::Corridor => ((g * g) as f64 * cfg.corridor_wall_density).round() as usize,
    };
    for w in sample_cells(rng, &mut free, n_walls)? {
        cells[w] = Cell::Wall;
    }
    let start = sample_cells(rng, &mut free, 1)?[0];
    let start_rc = (start / g, start % g);
    let reach = flood_fill(g, start_rc, |i| cells[i] != Cell::Wall);
    let mut reachable: Vec<usize> = (0..g * g)
        .filter(|&i| i != start && reach[i].is_some())
        .collect();
    match cfg.game {
        GameId::Collector => {
            for h in sample_cells(rng, &mut reachable, cfg.hazards)? {
                cells[h] = Cell::Hazard;
            }
            // Fruits only where the agent can walk without touching hazards.
            let safe = flood_fill(g, start_rc, |i| !matches!(cells[i], Cell::Wall | Cell::Hazard));
            let mut pool: Vec<usize> = (0..g * g)
                .filter(|&i| i != start && safe[i].is_some() && cells[i] == Cell::Empty)
                .collect();
            for f in sample_cells(rng, &mut pool, cfg.fruits)? {
                cells[f] = Cell::Fruit;
            }
        }
        GameId::Corridor => {
            let max_d = reachable.iter().filter_map(|&i| reach[i]).max()?;
            let want = max_d.min(4);
            let mut far: Vec<usize> = reachable
                .iter()
                .copied()
                .filter(|&i| reach[i].is_some_and(|d| d >= want))
                .collect();
            let exit = sample_cells(rng, &mut far, 1)?[0];
            cells[exit] = Cell::Exit;
        }
    }
    // A reward-bearing cell must be reachable around walls and hazards.
    let check = flood_fill(g, start_rc, |i| !matches!(cells[i], Cell::Wall | Cell::Hazard));
    let solvable = (0..g * g).any(|i| check[i].is_some() && matches!(cells[i], Cell::Fruit | Cell::Exit));
    solvable.then_some((cells, start_rc))
}

/// Generate the level for `seed`. Unsolvable layouts are regenerated from a
/// perturbed sub-seed, up to a bounded number of attempts.
pub fn make_level(seed: LevelSeed, cfg: &EnvConfig) -> Result<EnvState> {
    cfg.validate()?;
    if seed.game != cfg.game {
        return Err(Error::Config(format!(
            "level of {} requested from a {} config",
            seed.game, cfg.game
        )));
    }
    if seed.index >= cfg.universe {
        return Err(Error::Config(format!(
            "level index {} outside universe 0..{}",
            seed.index, cfg.universe
        )));
    }
    let mut palette_rng = rng_from_seed(derive_seed(seed.seed, "palette"));
    let palette = Palette::random(&mut palette_rng);
    let n_px = cfg.obs_size * cfg.obs_size;
    let speckle: Vec<bool> = (0..n_px)
        .map(|_| palette_rng.random::<f64>() < cfg.speckle_density)
        .collect();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = rng_from_seed(derive_seed(seed.seed, &format!("layout{attempt}")));
        if let Some((cells, agent)) = try_layout(cfg, &mut rng) {
            let fruits_left = cells.iter().filter(|c| **c == Cell::Fruit).count();
            return Ok(EnvState {
                level: seed,
                grid: cfg.grid,
                cells,
                agent,
                steps: 0,
                horizon: cfg.horizon,
                done: false,
                fruits_left,
                palette,
                speckle,
                fruit_reward: cfg.fruit_reward,
                exit_reward: cfg.exit_reward,
                obs_size: cfg.obs_size,
            });
        }
    }
    Err(Error::LevelGeneration {
        game: seed.game.to_string(),
        index: seed.index,
        attempts: MAX_ATTEMPTS,
    })
}

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

impl EnvState {
    pub fn cell(&self, r: usize, c: usize) -> Cell {
        self.cells[r * self.grid + c]
    }

    pub fn obs_size(&self) -> usize {
        self.obs_size
    }

    /// Apply `action` (0 no-op, 1 up, 2 down, 3 left, 4 right).
    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EnvContract("step called on a finished episode".into()));
        }
        if action >= NUM_ACTIONS {
            return Err(Error::EnvContract(format!("action {action} out of range")));
        }
        let (r, c) = self.agent;
        let g = self.grid;
        let target = match action {
            1 if r > 0 => (r - 1, c),
            2 if r + 1 < g => (r + 1, c),
            3 if c > 0 => (r, c - 1),
            4 if c + 1 < g => (r, c + 1),
            _ => (r, c),
        };
        if self.cell(target.0, target.1) != Cell::Wall {
            self.agent = target;
        }
        let idx = self.agent.0 * g + self.agent.1;
        let mut reward = 0.0;
        match self.cells[idx] {
            Cell::Fruit => {
                reward = self.fruit_reward;
                self.cells[idx] = Cell::Empty;
                self.fruits_left -= 1;
                if self.fruits_left == 0 {
                    self.done = true;
                }
            }
            Cell::Hazard => self.done = true,
            Cell::Exit => {
                reward = self.exit_reward;
                self.done = true;
            }
            Cell::Empty | Cell::Wall => {}
        }
        self.steps += 1;
        if self.steps >= self.horizon {
            self.done = true;
        }
        Ok(StepOutcome {
            reward,
            done: self.done,
        })
    }

    /// Render as 8-bit CHW pixels.
    pub fn render_u8(&self, out: &mut [u8]) {
        render::render(self, out);
    }

    /// Render as a `[3, H, W]` observation with values in `[0, 1]`.
    pub fn observation(&self) -> Vec<f64> {
        let mut px = vec![0u8; 3 * self.obs_size * self.obs_size];
        self.render_u8(&mut px);
        px.iter().map(|&v| f64::from(v) / 255.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(game: GameId) -> EnvConfig {
        EnvConfig::for_game(game)
    }

    #[test]
    fn same_seed_same_observation() {
        for game in GameId::ALL {
            let a = make_level(LevelSeed::new(game, 17), &cfg(game)).unwrap();
            let b = make_level(LevelSeed::new(game, 17), &cfg(game)).unwrap();
            assert_eq!(a.observation(), b.observation());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn observations_are_unit_range() {
        let s = make_level(LevelSeed::new(GameId::Collector, 3), &cfg(GameId::Collector)).unwrap();
        let obs = s.observation();
        assert_eq!(obs.len(), 3 * 32 * 32);
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noop_in_empty_cell_is_null_transition() {
        let mut s = make_level(LevelSeed::new(GameId::Collector, 5), &cfg(GameId::Collector)).unwrap();
        let before = s.agent;
        let out = s.step(ACTION_NOOP).unwrap();
        assert_eq!(out, StepOutcome { reward: 0.0, done: false });
        assert_eq!(s.agent, before);
    }

    #[test]
    fn stepping_onto_fruit_pays_and_consumes() {
        let c = cfg(GameId::Collector);
        let mut s = make_level(LevelSeed::new(GameId::Collector, 9), &c).unwrap();
        // Place a fruit right of the agent, on an open cell.
        s.cells.iter_mut().for_each(|x| *x = Cell::Empty);
        s.agent = (3, 3);
        s.cells[3 * 8 + 4] = Cell::Fruit;
        s.cells[0] = Cell::Fruit;
        s.fruits_left = 2;
        let out = s.step(4).unwrap();
        assert_eq!(out.reward, c.fruit_reward);
        assert!(!out.done);
        assert_eq!(s.cell(3, 4), Cell::Empty);
        assert_eq!(s.fruits_left, 1);
    }

    #[test]
    fn horizon_ends_episode() {
        let mut c = cfg(GameId::Corridor);
        c.horizon = 5;
        let mut s = make_level(LevelSeed::new(GameId::Corridor, 1), &c).unwrap();
        s.cells.iter_mut().for_each(|x| {
            if *x == Cell::Exit {
                *x = Cell::Empty
            }
        });
        for t in 0..5 {
            let out = s.step(ACTION_NOOP).unwrap();
            assert_eq!(out.done, t == 4);
        }
        assert!(matches!(s.step(ACTION_NOOP), Err(Error::EnvContract(_))));
    }

    #[test]
    fn hazard_ends_episode() {
        let mut s = make_level(LevelSeed::new(GameId::Collector, 2), &cfg(GameId::Collector)).unwrap();
        s.cells.iter_mut().for_each(|x| *x = Cell::Empty);
        s.agent = (0, 0);
        s.cells[1] = Cell::Hazard;
        s.cells[63] = Cell::Fruit;
        let out = s.step(4).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn generated_levels_are_solvable() {
        for game in GameId::ALL {
            let c = cfg(game);
            for i in 0..200 {
                let s = make_level(LevelSeed::new(game, i), &c).unwrap();
                let reach = flood_fill(c.grid, s.agent, |k| !matches!(s.cells[k], Cell::Wall | Cell::Hazard));
                assert!((0..64).any(|k| reach[k].is_some() && matches!(s.cells[k], Cell::Fruit | Cell::Exit)));
                if game == GameId::Collector {
                    assert_eq!(s.fruits_left, c.fruits);
                }
            }
        }
    }

    #[test]
    fn index_outside_universe_rejected() {
        let mut c = cfg(GameId::Collector);
        c.universe = 10;
        assert!(make_level(LevelSeed::new(GameId::Collector, 10), &c).is_err());
    }

    #[test]
    fn game_names_round_trip() {
        for g in GameId::ALL {
            assert_eq!(g.name().parse::<GameId>().unwrap(), g);
        }
        assert!("maze".parse::<GameId>().is_err());
    }
}
