use super::CodingError;

/// Per-worker probability of never answering.
#[derive(Debug, Clone, PartialEq)]
pub struct StragglerProfile {
    pub probabilities: Vec<f64>,
}

impl StragglerProfile {
    pub fn new(probabilities: Vec<f64>) -> Result<Self, CodingError> {
        if let Some(&p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(CodingError::Probability(p));
        }
        Ok(StragglerProfile { probabilities })
    }

    pub fn uniform(n: usize, lambda: f64) -> Result<Self, CodingError> {
        Self::new(vec![lambda; n])
    }

    /// Profile where exactly the listed workers straggle.
    pub fn from_set(n: usize, stragglers: &[usize]) -> Self {
        let mut p = vec![0.0; n];
        for &k in stragglers {
            p[k] = 1.0;
        }
        StragglerProfile { probabilities: p }
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        if self.probabilities.is_empty() {
            return 0.0;
        }
        self.probabilities.iter().sum::<f64>() / self.len() as f64
    }

    pub fn rate(&self) -> f64 {
        1.0 - self.lambda()
    }

    /// Indices sorted by descending probability, ties by lowest index.
    pub fn ranked(&self, indices: &[usize]) -> Vec<usize> {
        let mut v = indices.to_vec();
        v.sort_by(|&a, &b| {
            self.probabilities[b]
                .partial_cmp(&self.probabilities[a])
                .expect("probabilities are finite")
                .then(a.cmp(&b))
        });
        v
    }

    /// The `round(λ·n)` likeliest stragglers overall.
    pub fn straggler_set(&self) -> Vec<usize> {
        let all: Vec<usize> = (0..self.len()).collect();
        let count = (self.lambda() * self.len() as f64).round() as usize;
        let mut s = self.ranked(&all);
        s.truncate(count);
        s.sort_unstable();
        s
    }
}

/// One power-of-two group of workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub index: usize,
    pub size: usize,
    /// Rows of the input handled by this group.
    pub rows: usize,
    pub row_offset: usize,
    /// Worker indices in index order.
    pub members: Vec<usize>,
    /// Number of frozen positions, `|S_κ|`.
    pub frozen: usize,
    /// Worker index at each code position.
    pub positions: Vec<usize>,
    /// Rows per row-block after padding.
    pub block_rows: usize,
}

impl Group {
    pub fn data_positions(&self) -> std::ops::Range<usize> {
        0..self.size - self.frozen
    }

    pub fn is_frozen(&self, position: usize) -> bool {
        position >= self.size - self.frozen
    }

    pub fn position_of(&self, worker: usize) -> Option<usize> {
        self.positions.iter().position(|&w| w == worker)
    }

    pub fn straggler_set(&self) -> Vec<usize> {
        let mut s = self.positions[self.size - self.frozen..].to_vec();
        s.sort_unstable();
        s
    }

    pub fn padded_rows(&self) -> usize {
        self.block_rows * (self.size - self.frozen)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPlan {
    pub workers: usize,
    pub rows: usize,
    pub groups: Vec<Group>,
}

impl GroupPlan {
    pub fn group_of(&self, worker: usize) -> Option<&Group> {
        self.groups.iter().find(|g| g.members.contains(&worker))
    }

    /// Workers that receive shards.
    pub fn active_workers(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .groups
            .iter()
            .flat_map(|g| g.data_positions().map(move |p| g.positions[p]))
            .collect();
        v.sort_unstable();
        v
    }

    pub fn max_block_rows(&self) -> usize {
        self.groups.iter().map(|g| g.block_rows).max().unwrap_or(0)
    }
}

/// Binary decomposition of `n`, largest part first.
pub fn group_sizes(n: usize) -> Vec<usize> {
    (0..usize::BITS)
        .rev()
        .map(|b| 1usize << b)
        .filter(|&p| n & p != 0)
        .collect()
}

pub fn plan_groups(
    n: usize,
    rows: usize,
    profile: &StragglerProfile,
) -> Result<GroupPlan, CodingError> {
    if n == 0 {
        return Err(CodingError::NoWorkers);
    }
    if profile.len() != n {
        return Err(CodingError::ProfileLength {
            expected: n,
            found: profile.len(),
        });
    }
    let sizes = group_sizes(n);
    let mut group_rows: Vec<usize> = sizes.iter().map(|&s| s * rows / n).collect();
    let mut rest = rows - group_rows.iter().sum::<usize>();
    for r in group_rows.iter_mut() {
        if rest == 0 {
            break;
        }
        *r += 1;
        rest -= 1;
    }

    let mut groups = Vec::with_capacity(sizes.len());
    let mut first = 0;
    let mut row_offset = 0;
    for (index, (&size, &grows)) in sizes.iter().zip(&group_rows).enumerate() {
        let members: Vec<usize> = (first..first + size).collect();
        let expected: f64 = members.iter().map(|&k| profile.probabilities[k]).sum();
        let frozen = (expected.round() as usize).min(size - 1);
        let ranked = profile.ranked(&members);
        let stragglers = &ranked[..frozen];
        let mut positions: Vec<usize> = members
            .iter()
            .copied()
            .filter(|k| !stragglers.contains(k))
            .collect();
        positions.extend_from_slice(stragglers);
        let data = size - frozen;
        groups.push(Group {
            index,
            size,
            rows: grows,
            row_offset,
            members,
            frozen,
            positions,
            block_rows: grows.div_ceil(data),
        });
        first += size;
        row_offset += grows;
    }
    Ok(GroupPlan {
        workers: n,
        rows,
        groups,
    })
}
