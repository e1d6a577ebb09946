use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::Filtration;
use crate::spec_model::{GameSpec, Player};

/// A feedback switching strategy: for every interior node and mode pair, the
/// mode the player moves to (its own current mode means "stay").
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeedbackStrategy {
    player: Player,
    m1: usize,
    m2: usize,
    interior: usize,
    actions: Vec<u16>,
}

impl FeedbackStrategy {
    pub fn stay(player: Player, m1: usize, m2: usize, interior: usize) -> Self {
        Self::from_fn(player, m1, m2, interior, |_, i, j| match player {
            Player::One => i,
            Player::Two => j,
        })
    }

    /// Moves to `target` whenever the player is elsewhere.
    pub fn constant(player: Player, m1: usize, m2: usize, interior: usize, target: usize) -> Self {
        Self::from_fn(player, m1, m2, interior, |_, _, _| target)
    }

    pub fn from_fn(
        player: Player,
        m1: usize,
        m2: usize,
        interior: usize,
        mut f: impl FnMut(usize, usize, usize) -> usize,
    ) -> Self {
        let mut actions = Vec::with_capacity(interior * m1 * m2);
        for node in 0..interior {
            for i in 0..m1 {
                for j in 0..m2 {
                    actions.push(f(node, i, j) as u16);
                }
            }
        }
        Self {
            player,
            m1,
            m2,
            interior,
            actions,
        }
    }

    /// Shaped for `spec` on `f`, all entries "stay".
    pub fn stay_for<F: Filtration + ?Sized>(player: Player, spec: &GameSpec, f: &F) -> Self {
        Self::stay(player, spec.m1(), spec.m2(), f.interior_count())
    }

    pub fn player(&self) -> Player {
        self.player
    }

    pub fn own_modes(&self) -> usize {
        match self.player {
            Player::One => self.m1,
            Player::Two => self.m2,
        }
    }

    pub fn interior(&self) -> usize {
        self.interior
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    /// Number of table entries.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn index(&self, node: usize, i: usize, j: usize) -> usize {
        (node * self.m1 + i) * self.m2 + j
    }

    /// Target mode at `(node, i, j)`; leaves always stay.
    pub fn action(&self, node: usize, i: usize, j: usize) -> usize {
        if node >= self.interior {
            return self.own(i, j);
        }
        self.actions[self.index(node, i, j)] as usize
    }

    pub fn set(&mut self, node: usize, i: usize, j: usize, target: usize) {
        let k = self.index(node, i, j);
        self.actions[k] = target as u16;
    }

    fn own(&self, i: usize, j: usize) -> usize {
        match self.player {
            Player::One => i,
            Player::Two => j,
        }
    }

    pub fn switches(&self, node: usize, i: usize, j: usize) -> bool {
        self.action(node, i, j) != self.own(i, j)
    }

    /// Checks shape against a game and filtration, and that targets are valid modes.
    pub fn check<F: Filtration + ?Sized>(&self, spec: &GameSpec, f: &F) -> Result<()> {
        if (self.m1, self.m2) != (spec.m1(), spec.m2()) || self.interior != f.interior_count() {
            return Err(Error::Shape(format!(
                "strategy table is for {}x{} modes on {} interior nodes, game is {}x{} on {}",
                self.m1,
                self.m2,
                self.interior,
                spec.m1(),
                spec.m2(),
                f.interior_count()
            )));
        }
        if let Some(bad) = self.actions.iter().find(|&&a| a as usize >= self.own_modes()) {
            return Err(Error::Shape(format!(
                "strategy targets mode {bad}, but player {} has {} modes",
                self.player,
                self.own_modes()
            )));
        }
        Ok(())
    }

    /// Decodes strategy number `index` in base `own_modes`, one digit per entry.
    pub fn from_index(player: Player, m1: usize, m2: usize, interior: usize, mut index: u128) -> Self {
        let base = match player {
            Player::One => m1,
            Player::Two => m2,
        } as u128;
        Self::from_fn(player, m1, m2, interior, |_, _, _| {
            let digit = index % base;
            index /= base;
            digit as usize
        })
    }

    /// Number of distinct tables, or `None` on overflow.
    pub fn count(player: Player, m1: usize, m2: usize, interior: usize) -> Option<u128> {
        let base = match player {
            Player::One => m1,
            Player::Two => m2,
        } as u128;
        let digits = u32::try_from(interior * m1 * m2).ok()?;
        base.checked_pow(digits)
    }

    /// Random table whose own moves never cycle: at every `(node, opponent
    /// mode)` the player's modes get a random rank, and an entry switches (with
    /// probability `p_switch`) only to a mode of lower rank.
    pub fn random_acyclic<R: Rng + ?Sized>(
        player: Player,
        m1: usize,
        m2: usize,
        interior: usize,
        p_switch: f64,
        rng: &mut R,
    ) -> Self {
        let mut s = Self::stay(player, m1, m2, interior);
        let own = s.own_modes();
        let other = match player {
            Player::One => m2,
            Player::Two => m1,
        };
        let mut order: Vec<usize> = (0..own).collect();
        for node in 0..interior {
            for o in 0..other {
                order.shuffle(rng);
                for (rank, &mode) in order.iter().enumerate() {
                    if rank == 0 || !rng.gen_bool(p_switch) {
                        continue;
                    }
                    let target = order[rng.gen_range(0..rank)];
                    let (i, j) = match player {
                        Player::One => (mode, o),
                        Player::Two => (o, mode),
                    };
                    s.set(node, i, j, target);
                }
            }
        }
        s
    }

    /// Tabular dump: `node,i,j,action`, one row per entry that switches,
    /// preceded by a comment line carrying the shape.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Usage(format!("write failed: {e}"));
        writeln!(
            out,
            "# player={} m1={} m2={} interior={}",
            self.player, self.m1, self.m2, self.interior
        )
        .map_err(io)?;
        writeln!(out, "node,i,j,action").map_err(io)?;
        for node in 0..self.interior {
            for i in 0..self.m1 {
                for j in 0..self.m2 {
                    if self.switches(node, i, j) {
                        writeln!(out, "{node},{i},{j},{}", self.action(node, i, j)).map_err(io)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads back a table written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input
            .read_to_string(&mut text)
            .map_err(|e| Error::Usage(format!("read failed: {e}")))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::Usage("missing strategy header line".into()))?;
        let mut player = None;
        let (mut m1, mut m2, mut interior) = (None, None, None);
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("bad header field {kv:?}")))?;
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| Error::Usage(format!("bad header value {kv:?}")))
            };
            match k {
                "player" => {
                    player = Some(match v {
                        "I" => Player::One,
                        "II" => Player::Two,
                        _ => return Err(Error::Usage(format!("unknown player {v:?}"))),
                    })
                }
                "m1" => m1 = Some(num()?),
                "m2" => m2 = Some(num()?),
                "interior" => interior = Some(num()?),
                _ => return Err(Error::Usage(format!("unknown header field {k:?}"))),
            }
        }
        let missing = || Error::Usage("incomplete strategy header".into());
        let mut s = Self::stay(
            player.ok_or_else(missing)?,
            m1.ok_or_else(missing)?,
            m2.ok_or_else(missing)?,
            interior.ok_or_else(missing)?,
        );
        for (n, line) in lines.enumerate() {
            if n == 0 && line.trim() == "node,i,j,action" {
                continue;
            }
            let parts: Vec<usize> = line
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Usage(format!("bad strategy row {line:?}")))?;
            let [node, i, j, a] = parts[..] else {
                return Err(Error::Usage(format!("bad strategy row {line:?}")));
            };
            if node >= s.interior || i >= s.m1 || j >= s.m2 || a >= s.own_modes() {
                return Err(Error::Usage(format!("strategy row out of range: {line:?}")));
            }
            s.set(node, i, j, a);
        }
        Ok(s)
    }
}
