//! Closed class vocabularies of the perception tools.

/// Scene and land-cover classes of the scene classifier.
pub const SCENE_CLASSES: [&str; 51] = [
    "Dry land",
    "Greenhouse",
    "Paddy field",
    "Terraced field",
    "Meadow",
    "Forest",
    "Orchard",
    "Commercial area",
    "Storage tank",
    "Wastewater tank",
    "Works",
    "Oil field",
    "Mine",
    "Quarry",
    "Solar",
    "Wind",
    "Substation",
    "Swimming pool",
    "Church",
    "Cemetery",
    "Basketball court",
    "Tennis court",
    "Baseball field",
    "Ground track field",
    "Golf course",
    "Stadium",
    "Detached house",
    "Apartment",
    "Mobile home park",
    "Apron",
    "Helipad",
    "Runway",
    "Road",
    "Viaduct",
    "Bridge",
    "Intersection",
    "Parking lot",
    "Roundabout",
    "Pier",
    "Railway",
    "Train station",
    "Rock land",
    "Bare land",
    "Ice land",
    "Island",
    "Desert",
    "Sparse shrub land",
    "Lake",
    "River",
    "Beach",
    "Dam",
];

/// Oriented-box detector classes.
pub const DETECTION_CLASSES: [&str; 15] = [
    "Plane",
    "Ship",
    "Storage Tank",
    "Baseball Diamond",
    "Tennis Court",
    "Basketball Court",
    "Ground Track Field",
    "Harbor",
    "Bridge",
    "Large Vehicle",
    "Small Vehicle",
    "Helicopter",
    "Roundabout",
    "Soccer Ball Field",
    "Swimming Pool",
];

/// Land-cover classes of the segmentation backend, indexed by mask label.
pub const SEGMENTATION_CLASSES: [&str; 7] =
    ["background", "building", "road", "water", "barren", "forest", "agriculture"];

/// Case-insensitive lookup returning the canonical spelling.
pub fn canonical(vocabulary: &[&'static str], name: &str) -> Option<&'static str> {
    let name = name.trim();
    vocabulary.iter().copied().find(|c| c.eq_ignore_ascii_case(name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn vocabularies_are_distinct_within_themselves() {
        for v in [&SCENE_CLASSES[..], &DETECTION_CLASSES[..], &SEGMENTATION_CLASSES[..]] {
            let lower: BTreeSet<_> = v.iter().map(|s| s.to_ascii_lowercase()).collect();
            assert_eq!(lower.len(), v.len());
        }
    }

    #[test]
    fn lookup() {
        assert_eq!(canonical(&DETECTION_CLASSES, "plane"), Some("Plane"));
        assert_eq!(canonical(&SCENE_CLASSES, "airport"), None);
    }
}
