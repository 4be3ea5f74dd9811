//! Reference policies: uniform random and BFS-greedy.

use std::collections::VecDeque;

use rand::Rng as _;

use super::{neighbours, Cell, EnvState, ACTION_NOOP, NUM_ACTIONS};
use crate::rng::Rng;

pub fn random_action(rng: &mut Rng) -> usize {
    rng.random_range(0..NUM_ACTIONS)
}

fn action_between(from: (usize, usize), to: (usize, usize)) -> usize {
    match (to.0 as isize - from.0 as isize, to.1 as isize - from.1 as isize) {
        (-1, 0) => 1,
        (1, 0) => 2,
        (0, -1) => 3,
        (0, 1) => 4,
        _ => ACTION_NOOP,
    }
}

/// First move of a shortest hazard-free path to the nearest fruit or exit.
pub fn greedy_action(s: &EnvState) -> usize {
    let g = s.grid;
    let mut parent: Vec<Option<usize>> = vec![None; g * g];
    let start = s.agent.0 * g + s.agent.1;
    parent[start] = Some(start);
    let mut q = VecDeque::from([s.agent]);
    while let Some((r, c)) = q.pop_front() {
        let here = r * g + c;
        if here != start && matches!(s.cells[here], Cell::Fruit | Cell::Exit) {
            let mut cur = here;
            while parent[cur] != Some(start) {
                cur = parent[cur].expect("on path");
            }
            return action_between(s.agent, (cur / g, cur % g));
        }
        for (nr, nc) in neighbours(g, r, c) {
            let i = nr * g + nc;
            if parent[i].is_none() && !matches!(s.cells[i], Cell::Wall | Cell::Hazard) {
                parent[i] = Some(here);
                q.push_back((nr, nc));
            }
        }
    }
    ACTION_NOOP
}
