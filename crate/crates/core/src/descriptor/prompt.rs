use super::{DescriptorError, Result};

pub const PROMPT1_TEMPLATE: &str = "Please convert the given image into an accurate and concise textual description relevant to the {dataset name}, focusing on extracting key attributes that can influence the buying behavior of users, such as color, material, style, functionality, etc. To generate the textual description using a one-paragraph natural language overview in no more than 100 words.";

pub const PROMPT2_TEMPLATE: &str = "Please reason about the user preferences based on the following list of item descriptions that he or she has interacted with. The list is: {behavioral description}. To generate the user preferences using a one-paragraph natural language in no more than 100 words.";

pub const FUSION_SEPARATOR: &str = ". ";

/// Item-description prompt for one dataset. The image travels alongside the
/// text as a separate message part.
pub fn render_prompt1(dataset_name: &str) -> Result<String> {
    if dataset_name.trim().is_empty() {
        return Err(DescriptorError::EmptyDatasetName);
    }
    Ok(PROMPT1_TEMPLATE.replace("{dataset name}", dataset_name))
}

/// `1. "first"; 2. "second"; ...`
pub fn serialize_behavior_list(list: &[String]) -> String {
    list.iter()
        .enumerate()
        .map(|(k, d)| format!("{}. \"{}\"", k + 1, d))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn render_prompt2(behavior_list: &[String]) -> Result<String> {
    if behavior_list.is_empty() {
        return Err(DescriptorError::EmptyBehaviorList);
    }
    Ok(PROMPT2_TEMPLATE.replace("{behavioral description}", &serialize_behavior_list(behavior_list)))
}

/// Joins metadata text and a generated description with [`FUSION_SEPARATOR`];
/// an empty side drops the separator.
pub fn fuse_descriptions(text_meta: &str, semantic_desc: &str) -> String {
    match (text_meta.is_empty(), semantic_desc.is_empty()) {
        (true, _) => semantic_desc.to_string(),
        (_, true) => text_meta.to_string(),
        _ => format!("{text_meta}{FUSION_SEPARATOR}{semantic_desc}"),
    }
}
