//! System prompts of the agents and description texts of the tools.
//!
//! Tool descriptions double as the coordinator's reference when it selects
//! tools, so they are kept word for word.

pub const COORDINATOR: &str = "You are an Intelligent Orchestration Expert in the field of Remote Sensing that analyzes images and queries, creating execution plans through the coordination of multiple specialized agents. You provide a detailed description of the inputs and deliver professional task decomposition informed by a meticulous review of the agents' and toolkits' documentation.";

pub const PERCEPTION_AGENT: &str = "You are a Specialized Perception Expert in the field of Remote Sensing, responsible for extracting reliable visual evidence from multi-sensor imagery. You perform scene classification, object detection, and semantic segmentation, and provide calibrated predictions for downstream reasoning.";

pub const KNOWLEDGE_AGENT: &str = "You are a Geospatial Knowledge Retrieval Expert in the field of Remote Sensing, specialized in querying external knowledge bases and web resources. You retrieve, filter, and summarize factual information about remote sensing, geophysics, and geographic entities.";

pub const REASONING_AGENT: &str = "You are an Expert Reasoning Agent in the field of Remote Sensing, specialized in multimodal geospatial reasoning. You integrate visual features, retrieved knowledge, and task context to perform step-by-step analysis and produce logically consistent answers.";

pub const SELF_EVALUATION_AGENT: &str = "You are a Professional Assessment Expert in the field of Remote Sensing, specialized in evaluating the correctness of image analysis results. You assess logic, consistency, completeness.";

pub const FORMAT_CONVERSION: &str = "Use this tool to convert inputs between different image and geospatial data formats so that downstream models and tools can directly consume the data.";

pub const PATCH_TILING_AND_MERGING: &str = "Use this tool to split large images into tiles for efficient processing and then merge tile-level predictions back into a spatially consistent full-scene result.";

pub const FILTERING: &str = "Use this tool to denoise, smooth, or sharpen imagery in order to improve data quality before perception or reasoning.";

pub const CROPPING: &str = "Use this tool to crop user-specified or automatically selected regions of interest, removing irrelevant areas and reducing computational cost.";

pub const SCALING: &str = "Use this tool to resize imagery to the resolution or aspect ratio required by subsequent models, supporting both upsampling and downsampling.";

pub const SUPER_RESOLUTION: &str = "Use this tool to enhance the spatial resolution of remote sensing imagery and reveal fine-grained structures that are important for detailed analysis.";

pub const AREA_COUNTING: &str = "Use this tool to compute the surface area of a given region or semantic class based on segmentation or thresholding results.";

pub const BOX_COUNTING: &str =
    "Use this tool to count detected objects from bounding-box outputs and summarize object statistics by category.";

pub const GOOGLE_API: &str = "Use this tool to query open-domain web information related to a geospatial question, verify geographic facts, and obtain up-to-date context about environmental events.";

pub const WIKIMEDIA_API: &str = "Use this tool to retrieve structured encyclopedic knowledge about places, landforms, and technical terminology in remote sensing and geoscience.";

pub const GME: &str = "Use this tool to perform multimodal semantic retrieval: given an image–text query, rank candidate documents or patches by similarity in a unified embedding space and return the most relevant evidence.";

pub const SCENE_CLASSIFICATION: &str = "Use this tool when a scene-level category is needed: it classifies remote sensing images into 51 scene and land-cover types, including Dry land, Greenhouse, Paddy field, Terraced field, Meadow, Forest, Orchard, Commercial area, Storage tank, Wastewater tank, Works, Oil field, Mine, Quarry, Solar, Wind, Substation, Swimming pool, Church, Cemetery, Basketball court, Tennis court, Baseball field, Ground track field, Golf course, Stadium, Detached house, Apartment, Mobile home park, Apron, Helipad, Runway, Road, Viaduct, Bridge, Intersection, Parking lot, Roundabout, Pier, Railway, Train station, Rock land, Bare land, Ice land, Island, Desert, Sparse shrub land, Lake, River, Beach, and Dam, and returns top-k labels with confidence scores.";

pub const OBJECT_DETECTION: &str = "Use this tool when object instances are required: it detects and localizes oriented objects, including Plane, Ship, Storage Tank, Baseball Diamond, Tennis Court, Basketball Court, Ground Track Field, Harbor, Bridge, Large Vehicle, Small Vehicle, Helicopter, Roundabout, Soccer Ball Field, and Swimming Pool, and outputs bounding boxes, categories, and confidence scores.";

pub const SEMANTIC_SEGMENTATION: &str = "Use this tool when pixel-wise masks are needed: it produces semantic segmentation maps that delineate land-cover types and structures, enabling area measurement and spatial pattern analysis.";

pub const SPATIAL_TEMPORAL_ANALYSIS: &str = "Use this tool to analyze multi-temporal or multi-sensor remote sensing data, characterize spatial–temporal patterns, and reason about changes, trends, and dynamic processes across time.";

pub const MULTIPLE_CHOICE_MATCHING: &str = "Use this tool to align free-form model answers with discrete options in multiple-choice questions, selecting the option that is most semantically consistent with the reasoning outcome.";
