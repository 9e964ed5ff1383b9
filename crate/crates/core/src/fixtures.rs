//! The eight-vector example used throughout the tests: four users, five
//! items, ids 1-based to match their conventional names (u1..u4, p1..p5).

use crate::model::Record;

pub const TOY_USERS: [[f64; 2]; 4] = [[3.1, 0.1], [2.5, 2.0], [1.5, 2.2], [1.8, 3.2]];

pub const TOY_ITEMS: [[f64; 2]; 5] = [[2.8, 0.6], [2.5, 1.8], [3.2, 1.0], [1.4, 2.6], [0.5, 3.4]];

fn records(rows: &[[f64; 2]]) -> Vec<Record> {
    rows.iter()
        .enumerate()
        .map(|(i, v)| Record::from_components(i as u64 + 1, v.to_vec()).expect("fixture is valid"))
        .collect()
}

pub fn toy_users() -> Vec<Record> {
    records(&TOY_USERS)
}

pub fn toy_items() -> Vec<Record> {
    records(&TOY_ITEMS)
}
