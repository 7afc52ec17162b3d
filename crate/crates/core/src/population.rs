//! Hierarchical synthetic population: catchments, schools, households
//! with and without children, and the individuals living in them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stochastics::{sample, validate_probs, DistributionSpec, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Axis-aligned square.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
}

impl Bounds {
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x0 + self.side && p.y >= self.y0 && p.y <= self.y0 + self.side
    }

    fn random_point(&self, stream: &mut RngStream) -> Point {
        let x = stream.uniform(self.x0, self.x0 + self.side);
        let y = stream.uniform(self.y0, self.y0 + self.side);
        Point { x, y }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catchment {
    pub id: u32,
    pub num_schools: u32,
    pub bounds: Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct School {
    pub id: u32,
    pub catchment_id: u32,
    pub target_enrollment: u32,
    pub realized_enrollment: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParentType {
    Couple,
    Lone,
}

impl ParentType {
    pub fn adults(self) -> u32 {
        match self {
            ParentType::Couple => 2,
            ParentType::Lone => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: u32,
    pub catchment_id: u32,
    pub has_children: bool,
    pub parent_type: Option<ParentType>,
    pub num_children: u32,
    pub num_elem_children: u32,
    pub size: u32,
    pub location: Option<Point>,
    /// School of each elementary-aged child, in child order.
    pub school_ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u32,
    pub household_id: u32,
    pub catchment_id: u32,
    pub is_elem_child: bool,
    pub school_id: Option<u32>,
    pub location: Point,
}

/// Household composition parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub prop_parent_couple: f64,
    /// Over 1, 2, 3 children (3 stands for "3 or more").
    pub prop_children_couple: Vec<f64>,
    pub prop_children_lone: Vec<f64>,
    pub prop_elem_age: f64,
    /// Over childless household sizes 1..=len (the last size stands for "or more").
    pub prop_house_size: Vec<f64>,
    pub prop_house_children: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            prop_parent_couple: 0.77,
            prop_children_couple: vec![0.36, 0.43, 0.21],
            prop_children_lone: vec![0.58, 0.31, 0.11],
            prop_elem_age: 0.53,
            prop_house_size: vec![0.23, 0.35, 0.17, 0.16, 0.09],
            prop_house_children: 0.43,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, p) in [
            ("prop_parent_couple", self.prop_parent_couple),
            ("prop_elem_age", self.prop_elem_age),
            ("prop_house_children", self.prop_house_children),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(field, format!("must lie in [0, 1], got {p}")));
            }
        }
        validate_probs("prop_children_couple", &self.prop_children_couple)?;
        validate_probs("prop_children_lone", &self.prop_children_lone)?;
        validate_probs("prop_house_size", &self.prop_house_size)?;
        Ok(())
    }

    /// Expected children per household with children.
    pub fn mean_children(&self) -> f64 {
        let m = |v: &[f64]| v.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum::<f64>();
        self.prop_parent_couple * m(&self.prop_children_couple)
            + (1.0 - self.prop_parent_couple) * m(&self.prop_children_lone)
    }
}

/// Everything needed to build a population in one call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub catchments: u32,
    pub side: f64,
    pub school_count: DistributionSpec,
    pub enrollment: DistributionSpec,
    #[serde(flatten)]
    pub households: PopulationConfig,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            catchments: 16,
            side: 80.0,
            school_count: DistributionSpec::Normal { mean: 3.0, sd: 1.0 },
            enrollment: DistributionSpec::Gamma { shape: 7.86, rate: 0.032 },
            households: PopulationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationFrame {
    pub catchments: Vec<Catchment>,
    pub schools: Vec<School>,
    pub households: Vec<Household>,
    pub individuals: Vec<Individual>,
}

impl PopulationFrame {
    pub fn size(&self) -> usize {
        self.individuals.len()
    }

    pub fn enrolled(&self) -> usize {
        self.individuals.iter().filter(|i| i.is_elem_child).count()
    }
}

/// Continuous draw to a positive count: nearest integer, at least one.
fn to_count(x: f64) -> u32 {
    x.round().max(1.0).min(u32::MAX as f64) as u32
}

pub fn simulate_catchments(
    n: u32,
    side: f64,
    school_count_dist: &DistributionSpec,
    stream: &mut RngStream,
) -> Result<Vec<Catchment>> {
    if n == 0 {
        return Err(Error::param("catchments", "must be >= 1"));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::param("side", format!("must be > 0, got {side}")));
    }
    let columns = (n as f64).sqrt().ceil() as u32;
    let counts = sample(school_count_dist, n as usize, stream)?;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, draw)| {
            let i = i as u32;
            Catchment {
                id: i + 1,
                num_schools: to_count(draw),
                bounds: Bounds { x0: (i % columns) as f64 * side, y0: (i / columns) as f64 * side, side },
            }
        })
        .collect())
}

pub fn simulate_school_enrollments(
    catchments: &[Catchment],
    enroll_dist: &DistributionSpec,
    stream: &mut RngStream,
) -> Result<Vec<School>> {
    if catchments.is_empty() {
        return Err(Error::param("catchments", "list is empty"));
    }
    let total: u32 = catchments.iter().map(|c| c.num_schools).sum();
    let draws = sample(enroll_dist, total as usize, stream)?;
    let mut draws = draws.into_iter();
    let mut schools = Vec::with_capacity(total as usize);
    for c in catchments {
        for _ in 0..c.num_schools {
            schools.push(School {
                id: schools.len() as u32 + 1,
                catchment_id: c.id,
                target_enrollment: to_count(draws.next().expect("one draw per school")),
                realized_enrollment: 0,
            });
        }
    }
    Ok(schools)
}

/// Generates households with children catchment by catchment until every
/// school is exactly full. Fills `realized_enrollment` on `schools`.
pub fn simulate_households_with_children(
    schools: &mut [School],
    config: &PopulationConfig,
    stream: &RngStream,
) -> Result<Vec<Household>> {
    config.validate()?;
    if config.prop_elem_age == 0.0 && schools.iter().any(|s| s.target_enrollment > 0) {
        return Err(Error::NonTermination("prop_elem_age is 0 but schools require students".into()));
    }
    let mut catchment_ids: Vec<u32> = schools.iter().map(|s| s.catchment_id).collect();
    catchment_ids.dedup();
    let mut sorted = catchment_ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != catchment_ids.len() {
        return Err(Error::Contract("schools must be grouped by catchment".into()));
    }

    let per_catchment: Vec<(Vec<Household>, Vec<u32>)> = catchment_ids
        .par_iter()
        .map(|&cid| {
            let local: Vec<&School> = schools.iter().filter(|s| s.catchment_id == cid).collect();
            let mut rng = stream.child(format!("c{cid}"));
            fill_catchment(cid, &local, config, &mut rng)
        })
        .collect();

    let mut households = Vec::new();
    let mut realized = Vec::with_capacity(schools.len());
    for (hh, filled) in per_catchment {
        for mut h in hh {
            h.id = households.len() as u32 + 1;
            households.push(h);
        }
        realized.extend(filled);
    }
    for (school, r) in schools.iter_mut().zip(realized) {
        school.realized_enrollment = r;
    }
    Ok(households)
}

fn fill_catchment(
    catchment_id: u32,
    schools: &[&School],
    config: &PopulationConfig,
    rng: &mut RngStream,
) -> (Vec<Household>, Vec<u32>) {
    let mut filled = vec![0u32; schools.len()];
    let mut remaining: u64 = schools.iter().map(|s| s.target_enrollment as u64).sum();
    let mut cursor = 0usize;
    let mut households = Vec::new();

    while remaining > 0 {
        let parent_type = if rng.bernoulli(config.prop_parent_couple) { ParentType::Couple } else { ParentType::Lone };
        let probs = match parent_type {
            ParentType::Couple => &config.prop_children_couple,
            ParentType::Lone => &config.prop_children_lone,
        };
        let drawn_children = rng.categorical(probs) as u32 + 1;
        let elem = (0..drawn_children).filter(|_| rng.bernoulli(config.prop_elem_age)).count() as u32;

        // Children beyond the last open seat are dropped from the household.
        let placed = (elem as u64).min(remaining) as u32;
        let num_children = drawn_children - (elem - placed);
        let mut school_ids = Vec::with_capacity(placed as usize);
        for _ in 0..placed {
            while filled[cursor] >= schools[cursor].target_enrollment {
                cursor = (cursor + 1) % schools.len();
            }
            filled[cursor] += 1;
            school_ids.push(schools[cursor].id);
            cursor = (cursor + 1) % schools.len();
        }
        remaining -= placed as u64;

        households.push(Household {
            id: 0,
            catchment_id,
            has_children: true,
            parent_type: Some(parent_type),
            num_children,
            num_elem_children: placed,
            size: num_children + parent_type.adults(),
            location: None,
            school_ids,
        });
    }
    (households, filled)
}

/// Number of childless households matching `with_children` households for a
/// given regional share of households with children.
pub fn childless_count(with_children: usize, prop_house_children: f64) -> usize {
    (with_children as f64 * (1.0 - prop_house_children) / prop_house_children).round() as usize
}

pub fn simulate_households_without_children(
    with_children: &[Household],
    catchments: &[Catchment],
    config: &PopulationConfig,
    stream: &mut RngStream,
) -> Result<Vec<Household>> {
    config.validate()?;
    if with_children.is_empty() {
        return Err(Error::param("with_children", "no households with children"));
    }
    if config.prop_house_children <= 0.0 {
        return Err(Error::InvalidConfig("prop_house_children must be > 0 to scale childless households".into()));
    }
    let mut next_id = with_children.iter().map(|h| h.id).max().unwrap_or(0) + 1;
    let mut out = Vec::new();
    for c in catchments {
        let n_with = with_children.iter().filter(|h| h.catchment_id == c.id).count();
        for _ in 0..childless_count(n_with, config.prop_house_children) {
            let size = stream.categorical(&config.prop_house_size) as u32 + 1;
            let location = c.bounds.random_point(stream);
            out.push(Household {
                id: next_id,
                catchment_id: c.id,
                has_children: false,
                parent_type: None,
                num_children: 0,
                num_elem_children: 0,
                size,
                location: Some(location),
                school_ids: Vec::new(),
            });
            next_id += 1;
        }
    }
    Ok(out)
}

/// Expands households into individuals, placing any household that has no
/// location yet uniformly inside its catchment.
pub fn assemble_individuals(
    mut households: Vec<Household>,
    catchments: &[Catchment],
    stream: &mut RngStream,
) -> Result<(Vec<Household>, Vec<Individual>)> {
    let mut individuals = Vec::new();
    for h in households.iter_mut() {
        let bounds = catchments.iter().find(|c| c.id == h.catchment_id).map(|c| c.bounds).ok_or_else(|| {
            Error::Consistency(format!("household {} references unknown catchment {}", h.id, h.catchment_id))
        })?;
        let location = *h.location.get_or_insert_with(|| bounds.random_point(stream));
        let mut push = |school_id: Option<u32>| {
            individuals.push(Individual {
                id: individuals.len() as u32 + 1,
                household_id: h.id,
                catchment_id: h.catchment_id,
                is_elem_child: school_id.is_some(),
                school_id,
                location,
            })
        };
        let adults = h.size - h.num_children;
        for _ in 0..adults {
            push(None);
        }
        for &sid in &h.school_ids {
            push(Some(sid));
        }
        for _ in h.num_elem_children..h.num_children {
            push(None);
        }
    }
    Ok((households, individuals))
}

/// Runs every population stage on sub-streams of `stream`.
pub fn simulate_population(spec: &PopulationSpec, stream: &RngStream) -> Result<PopulationFrame> {
    let catchments =
        simulate_catchments(spec.catchments, spec.side, &spec.school_count, &mut stream.child("catchments"))?;
    let mut schools = simulate_school_enrollments(&catchments, &spec.enrollment, &mut stream.child("enrollment"))?;
    let mut households =
        simulate_households_with_children(&mut schools, &spec.households, &stream.child("households-children"))?;
    let childless = simulate_households_without_children(
        &households,
        &catchments,
        &spec.households,
        &mut stream.child("households-childless"),
    )?;
    households.extend(childless);
    let (households, individuals) = assemble_individuals(households, &catchments, &mut stream.child("individuals"))?;
    Ok(PopulationFrame { catchments, schools, households, individuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::derive_stream;

    #[test]
    fn sixteen_catchments_tile_a_grid() {
        let mut s = derive_stream(656, "pop/catchments");
        let cs = simulate_catchments(16, 80.0, &DistributionSpec::Normal { mean: 3.0, sd: 1.0 }, &mut s).unwrap();
        assert_eq!(cs.len(), 16);
        assert!(cs.iter().all(|c| c.num_schools >= 1 && c.bounds.side == 80.0));
        let mut origins: Vec<(i64, i64)> = cs.iter().map(|c| (c.bounds.x0 as i64, c.bounds.y0 as i64)).collect();
        origins.sort();
        origins.dedup();
        assert_eq!(origins.len(), 16);
        assert!(origins.iter().all(|&(x, y)| x % 80 == 0 && y % 80 == 0 && x < 320 && y < 320));
    }

    #[test]
    fn zero_variance_school_count() {
        let mut s = derive_stream(1, "t");
        let cs = simulate_catchments(1, 1.0, &DistributionSpec::Normal { mean: 5.0, sd: 0.0 }, &mut s).unwrap();
        assert_eq!(cs[0].num_schools, 5);
    }

    #[test]
    fn small_draws_floor_at_one() {
        // Hand oracle: every draw from N(0, 0.1) rounds to 0 or +/-0 and then clamps to 1.
        let mut s = derive_stream(1, "t");
        let cs = simulate_catchments(4, 10.0, &DistributionSpec::Normal { mean: 0.0, sd: 0.1 }, &mut s).unwrap();
        assert!(cs.iter().all(|c| c.num_schools == 1));
    }

    #[test]
    fn catchment_preconditions() {
        let mut s = derive_stream(1, "t");
        let d = DistributionSpec::Normal { mean: 1.0, sd: 0.0 };
        assert!(simulate_catchments(0, 1.0, &d, &mut s).is_err());
        assert!(simulate_catchments(1, 0.0, &d, &mut s).is_err());
    }

    #[test]
    fn degenerate_enrollment() {
        let cs = vec![Catchment { id: 1, num_schools: 2, bounds: Bounds { x0: 0.0, y0: 0.0, side: 1.0 } }];
        let mut s = derive_stream(1, "t");
        let schools =
            simulate_school_enrollments(&cs, &DistributionSpec::Normal { mean: 100.0, sd: 0.0 }, &mut s).unwrap();
        assert_eq!(schools.len(), 2);
        assert!(schools.iter().all(|s| s.target_enrollment == 100));
    }

    #[test]
    fn gamma_enrollment_mean() {
        let cs: Vec<Catchment> = (0..16)
            .map(|i| Catchment { id: i + 1, num_schools: 3, bounds: Bounds { x0: 0.0, y0: 0.0, side: 1.0 } })
            .collect();
        let mut s = derive_stream(656, "pop/enrollment");
        let schools =
            simulate_school_enrollments(&cs, &DistributionSpec::Gamma { shape: 7.86, rate: 0.032 }, &mut s).unwrap();
        assert_eq!(schools.len(), 48);
        let m = schools.iter().map(|s| s.target_enrollment as f64).sum::<f64>() / 48.0;
        assert!((200.0..=295.0).contains(&m), "mean enrollment {m}");
    }

    fn one_school(target: u32) -> Vec<School> {
        vec![School { id: 1, catchment_id: 1, target_enrollment: target, realized_enrollment: 0 }]
    }

    #[test]
    fn one_child_households_fill_exactly() {
        let config = PopulationConfig {
            prop_children_couple: vec![1.0, 0.0, 0.0],
            prop_children_lone: vec![1.0, 0.0, 0.0],
            prop_elem_age: 1.0,
            ..PopulationConfig::default()
        };
        let mut schools = one_school(5);
        let hh = simulate_households_with_children(&mut schools, &config, &derive_stream(1, "h")).unwrap();
        assert_eq!(hh.len(), 5);
        assert_eq!(schools[0].realized_enrollment, 5);
    }

    #[test]
    fn zero_elem_age_cannot_terminate() {
        let config = PopulationConfig { prop_elem_age: 0.0, ..PopulationConfig::default() };
        let mut schools = one_school(5);
        let err = simulate_households_with_children(&mut schools, &config, &derive_stream(1, "h")).unwrap_err();
        assert!(matches!(err, Error::NonTermination(_)));
    }

    #[test]
    fn last_household_is_truncated() {
        let config = PopulationConfig {
            prop_children_couple: vec![0.0, 0.0, 1.0],
            prop_children_lone: vec![0.0, 0.0, 1.0],
            prop_elem_age: 1.0,
            ..PopulationConfig::default()
        };
        let mut schools = one_school(7);
        let hh = simulate_households_with_children(&mut schools, &config, &derive_stream(1, "h")).unwrap();
        let kids: Vec<u32> = hh.iter().map(|h| h.num_elem_children).collect();
        assert_eq!(kids, vec![3, 3, 1]);
        let last = hh.last().unwrap();
        assert_eq!(last.num_children, 1);
        assert_eq!(last.size, 1 + last.parent_type.unwrap().adults());
    }

    #[test]
    fn round_robin_spreads_children() {
        let config = PopulationConfig {
            prop_children_couple: vec![0.0, 1.0, 0.0],
            prop_children_lone: vec![0.0, 1.0, 0.0],
            prop_elem_age: 1.0,
            ..PopulationConfig::default()
        };
        let mut schools: Vec<School> =
            (1..=2).map(|id| School { id, catchment_id: 1, target_enrollment: 3, realized_enrollment: 0 }).collect();
        let hh = simulate_households_with_children(&mut schools, &config, &derive_stream(1, "h")).unwrap();
        assert_eq!(hh[0].school_ids, vec![1, 2]);
        assert!(schools.iter().all(|s| s.realized_enrollment == 3));
    }

    #[test]
    fn childless_count_rounding() {
        assert_eq!(childless_count(430, 0.43), 570);
        assert_eq!(childless_count(430, 1.0), 0);
    }

    #[test]
    fn zero_share_is_config_error() {
        let with = vec![Household {
            id: 1,
            catchment_id: 1,
            has_children: true,
            parent_type: Some(ParentType::Lone),
            num_children: 1,
            num_elem_children: 1,
            size: 2,
            location: None,
            school_ids: vec![1],
        }];
        let cs = vec![Catchment { id: 1, num_schools: 1, bounds: Bounds { x0: 0.0, y0: 0.0, side: 1.0 } }];
        let config = PopulationConfig { prop_house_children: 0.0, ..PopulationConfig::default() };
        let err = simulate_households_without_children(&with, &cs, &config, &mut derive_stream(1, "x")).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }

    #[test]
    fn couple_household_expands_to_four() {
        let h = Household {
            id: 1,
            catchment_id: 1,
            has_children: true,
            parent_type: Some(ParentType::Couple),
            num_children: 2,
            num_elem_children: 1,
            size: 4,
            location: None,
            school_ids: vec![3],
        };
        let cs = vec![Catchment { id: 1, num_schools: 1, bounds: Bounds { x0: 0.0, y0: 0.0, side: 5.0 } }];
        let (hh, people) = assemble_individuals(vec![h], &cs, &mut derive_stream(1, "i")).unwrap();
        assert_eq!(people.len(), 4);
        assert_eq!(people.iter().filter(|p| p.school_id.is_some()).count(), 1);
        let loc = hh[0].location.unwrap();
        assert!(cs[0].bounds.contains(loc));
        assert!(people.iter().all(|p| p.location == loc));
    }
}
