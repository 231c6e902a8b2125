use crate::error::{Error, Result};

/// Allowed deviation of a semantic vector's component sum from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// A single point with its class-probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPoint {
    pub position: [f64; 3],
    pub semantics: Vec<f64>,
}

impl SemanticPoint {
    pub fn new(position: [f64; 3], semantics: Vec<f64>) -> Result<Self> {
        check_position(&position)?;
        check_simplex(&semantics)?;
        Ok(SemanticPoint {
            position,
            semantics,
        })
    }

    pub fn one_hot(position: [f64; 3], class: usize, class_count: usize) -> Result<Self> {
        if class >= class_count {
            return Err(Error::invalid(format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        let mut semantics = vec![0.0; class_count];
        semantics[class] = 1.0;
        Self::new(position, semantics)
    }

    pub fn argmax_class(&self) -> usize {
        argmax_class(&self.semantics)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax_class(semantics: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in semantics.iter().enumerate().skip(1) {
        if s > semantics[best] {
            best = i;
        }
    }
    best
}

fn check_position(p: &[f64; 3]) -> Result<()> {
    if p.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("non-finite position {p:?}")))
    }
}

fn check_simplex(s: &[f64]) -> Result<()> {
    if s.is_empty() {
        return Err(Error::invalid("semantic vector has no classes"));
    }
    if s.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(format!(
            "semantic vector has negative or non-finite entries: {s:?}"
        )));
    }
    let sum: f64 = s.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::invalid(format!(
            "semantic vector sums to {sum}, not 1"
        )));
    }
    Ok(())
}

/// Ordered set of semantic points sharing one class count.
///
/// Storage is flat: `semantics` holds `len() * class_count()` values, row per
/// point.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCloud {
    class_count: usize,
    positions: Vec<[f64; 3]>,
    semantics: Vec<f64>,
}

impl SemanticCloud {
    pub fn empty(class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        Ok(SemanticCloud {
            class_count,
            positions: Vec::new(),
            semantics: Vec::new(),
        })
    }

    pub fn new(class_count: usize, positions: Vec<[f64; 3]>, semantics: Vec<f64>) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("class count must be positive"));
        }
        Error::check_len(
            "semantic cloud storage",
            positions.len() * class_count,
            semantics.len(),
        )?;
        for p in &positions {
            check_position(p)?;
        }
        for row in semantics.chunks_exact(class_count) {
            check_simplex(row)?;
        }
        Ok(SemanticCloud {
            class_count,
            positions,
            semantics,
        })
    }

    /// Builds a cloud with one-hot semantics.
    pub fn from_labels(class_count: usize, positions: Vec<[f64; 3]>, labels: &[usize]) -> Result<Self> {
        Error::check_len("label list", positions.len(), labels.len())?;
        let mut semantics = vec![0.0; positions.len() * class_count];
        for (i, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::invalid(format!(
                    "label {label} out of range for {class_count} classes"
                )));
            }
            semantics[i * class_count + label] = 1.0;
        }
        Self::new(class_count, positions, semantics)
    }

    pub fn from_points(class_count: usize, points: &[SemanticPoint]) -> Result<Self> {
        let mut cloud = Self::empty(class_count)?;
        for p in points {
            cloud.push(p)?;
        }
        Ok(cloud)
    }

    pub fn push(&mut self, point: &SemanticPoint) -> Result<()> {
        Error::check_len("semantic point", self.class_count, point.semantics.len())?;
        check_position(&point.position)?;
        check_simplex(&point.semantics)?;
        self.positions.push(point.position);
        self.semantics.extend_from_slice(&point.semantics);
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn semantics(&self) -> &[f64] {
        &self.semantics
    }

    pub fn semantics_of(&self, i: usize) -> &[f64] {
        &self.semantics[i * self.class_count..(i + 1) * self.class_count]
    }

    pub fn point(&self, i: usize) -> SemanticPoint {
        SemanticPoint {
            position: self.positions[i],
            semantics: self.semantics_of(i).to_vec(),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.semantics
            .chunks_exact(self.class_count)
            .map(argmax_class)
            .collect()
    }

    /// Keeps the points for which `keep` returns true, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(usize, &[f64; 3]) -> bool) -> SemanticCloud {
        let mut positions = Vec::new();
        let mut semantics = Vec::new();
        for (i, p) in self.positions.iter().enumerate() {
            if keep(i, p) {
                positions.push(*p);
                semantics.extend_from_slice(self.semantics_of(i));
            }
        }
        SemanticCloud {
            class_count: self.class_count,
            positions,
            semantics,
        }
    }

    /// Concatenates two clouds with the same class count.
    pub fn concat(&self, other: &SemanticCloud) -> Result<SemanticCloud> {
        Error::check_len("cloud concatenation", self.class_count, other.class_count)?;
        let mut out = self.clone();
        out.positions.extend_from_slice(&other.positions);
        out.semantics.extend_from_slice(&other.semantics);
        Ok(out)
    }

    /// Constructor for callers that already guarantee the invariants.
    pub(crate) fn from_parts_unchecked(
        class_count: usize,
        positions: Vec<[f64; 3]>,
        semantics: Vec<f64>,
    ) -> SemanticCloud {
        debug_assert_eq!(positions.len() * class_count, semantics.len());
        SemanticCloud {
            class_count,
            positions,
            semantics,
        }
    }
}
