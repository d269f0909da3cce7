//! Leave-one-battery-out experiment splits.

use super::BatteryDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<BatteryDataset>,
    pub val: BatteryDataset,
    pub test: BatteryDataset,
}

impl Splits {
    pub fn train_ids(&self) -> Vec<&str> {
        self.train.iter().map(|d| d.battery_id.as_str()).collect()
    }
}

/// One battery for test, one for validation, the rest for training.
pub fn split_leave_one_battery_out(
    datasets: &[BatteryDataset],
    test_id: &str,
    val_id: &str,
) -> Result<Splits> {
    if test_id == val_id {
        return Err(Error::invalid(format!(
            "test and validation battery are both `{test_id}`"
        )));
    }
    for (i, d) in datasets.iter().enumerate() {
        if datasets[..i].iter().any(|o| o.battery_id == d.battery_id) {
            return Err(Error::Data(format!("battery {} listed twice", d.battery_id)));
        }
    }
    if datasets.len() < 3 {
        return Err(Error::Data(format!(
            "leave-one-battery-out needs at least 3 batteries, got {}",
            datasets.len()
        )));
    }
    let find = |id: &str| {
        datasets
            .iter()
            .find(|d| d.battery_id == id)
            .cloned()
            .ok_or_else(|| {
                let known: Vec<&str> = datasets.iter().map(|d| d.battery_id.as_str()).collect();
                Error::Data(format!("unknown battery `{id}` (available: {})", known.join(", ")))
            })
    };
    let test = find(test_id)?;
    let val = find(val_id)?;
    let train = datasets
        .iter()
        .filter(|d| d.battery_id != test_id && d.battery_id != val_id)
        .cloned()
        .collect();
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batteries(ids: &[&str]) -> Vec<BatteryDataset> {
        ids.iter()
            .map(|id| BatteryDataset {
                battery_id: id.to_string(),
                nominal_capacity: 1.1,
                cycles: vec![],
            })
            .collect()
    }

    #[test]
    fn calce_cs_split() {
        let all = batteries(&["CS2_35", "CS2_36", "CS2_37", "CS2_38"]);
        let s = split_leave_one_battery_out(&all, "CS2_35", "CS2_36").unwrap();
        assert_eq!(s.train_ids(), vec!["CS2_37", "CS2_38"]);
        assert_eq!(s.test.battery_id, "CS2_35");
        assert_eq!(s.val.battery_id, "CS2_36");
    }

    #[test]
    fn nasa_rw_splits() {
        let all = batteries(&["RW13", "RW14", "RW15", "RW16"]);
        let s = split_leave_one_battery_out(&all, "RW13", "RW14").unwrap();
        assert_eq!(s.train_ids(), vec!["RW15", "RW16"]);
        let s = split_leave_one_battery_out(&all, "RW14", "RW15").unwrap();
        assert_eq!(s.train_ids(), vec!["RW13", "RW16"]);
    }

    #[test]
    fn invalid_splits() {
        let all = batteries(&["a", "b", "c"]);
        assert!(split_leave_one_battery_out(&all, "a", "a").is_err());
        assert!(split_leave_one_battery_out(&all, "a", "z").is_err());
        assert!(split_leave_one_battery_out(&all[..2], "a", "b").is_err());
        let dup = batteries(&["a", "b", "a"]);
        assert!(split_leave_one_battery_out(&dup, "a", "b").is_err());
    }
}
