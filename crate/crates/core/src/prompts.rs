//! Prompt templates for every model call in the pipeline.
//!
//! Each builder returns a [`Prompt`] with the system and user text. The
//! user text is the template's parts joined by newlines with the caller's
//! values interpolated. Counts that the templates spell out in words are
//! rendered with [`number_word`].

use serde::{Deserialize, Serialize};

const SYS_AI: &str = "You are a helpful AI assistant";
const SYS: &str = "You are a helpful assistant.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    fn new(system: &str, parts: &[String]) -> Self {
        Self { system: system.to_string(), user: parts.join("\n") }
    }

    /// The same prompt with a format reminder appended for retry `attempt`
    /// (1-based). Attempt 0 returns the prompt unchanged. The reminder makes
    /// each retry a distinct request, so caches and temperature-0 servers do
    /// not hand back the same malformed answer.
    pub fn with_retry(&self, attempt: u32) -> Self {
        if attempt == 0 {
            return self.clone();
        }
        let mut user = self.user.clone();
        user.push_str(&format!(
            "\n\nReminder (attempt {}): answer strictly in the output format requested above.",
            attempt + 1
        ));
        Self { system: self.system.clone(), user }
    }
}

/// English word for small counts, digits otherwise.
pub fn number_word(n: usize) -> String {
    const WORDS: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven",
        "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

fn quoted_images<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    items
        .into_iter()
        .enumerate()
        .map(|(i, t)| format!("Image {}: \"{}\"", i + 1, t.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Criteria proposal from one stitched grid of `cols × rows` images.
pub fn image_grid_criteria(cols: usize, rows: usize, n_criteria: usize) -> Prompt {
    let n = cols * rows;
    Prompt::new(
        SYS_AI,
        &[
            format!("This image contains {n} individual images arranged in {cols} columns and {rows} rows."),
            "I am a machine learning researcher trying to identify all the possible clustering criteria or rules that could be used to group these images so I can better understand my data.".into(),
            format!(
                "Your job is to carefully analyze the entire set of the {n} images, and identify {} distinct clustering criteria or rules that could be used to cluster or group these images. Please consider different characteristics.",
                number_word(n_criteria)
            ),
            format!("Please write a list of the {n_criteria} identified clustering criteria or rules (separated by bullet points \u{201c}*\u{201d})."),
            format!(
                "Again, I want to identify all the possible clustering criteria or rules that could be used to group these images. List the {n_criteria} distinct clustering criteria or rules that you identified from the {n} images. Answer with a list (separated by bullet points \u{201c}*\u{201d}). Your response:"
            ),
        ],
    )
}

/// Criteria proposal from per-image tag lists (`tags_per_image` shown in the format line).
pub fn tag_criteria(tag_lists: &[Vec<String>], tags_per_image: usize) -> Prompt {
    let rendered: Vec<String> = tag_lists.iter().map(|t| t.join(", ")).collect();
    Prompt::new(
        SYS,
        &[
            format!(
                "The following are the tagging results of a set of images in the format of \"Image ID: tag 1, tag 2, ..., tag {tags_per_image}\". These assigned tags reflect the visible semantic content of each image:"
            ),
            quoted_images(rendered.iter().map(String::as_str)),
            "I am a machine learning researcher trying to figure out the potential clustering or grouping criteria that exist in these images. So I can better understand my data and group them into different clusters based on different criteria.".into(),
            "Please analyze these images by using their assigned tags. Come up with an array of distinct clustering criteria that exist in this set of images.".into(),
            "Please write a list of clustering criteria (separated by bullet points \"*\").".into(),
            "Again, I want to figure out what are the potential clustering or grouping criteria that I can use to group these images into different clusters. List an array of clustering or grouping criteria that often exist in this set of images based on the tagging results. Answer with a list (separated by bullet points \"*\"). Your response:".into(),
        ],
    )
}

/// Generic detailed caption for one image.
pub fn generic_caption() -> Prompt {
    Prompt::new(SYS_AI, &["Describe the following image in detail.".into()])
}

/// Criteria proposal from a subset of generic captions.
pub fn caption_criteria(captions: &[&str], n_criteria: usize) -> Prompt {
    let word = number_word(n_criteria);
    Prompt::new(
        SYS,
        &[
            "The following are the result of captioning a set of images:".into(),
            quoted_images(captions.iter().copied()),
            "I am a machine learning researcher trying to figure out the potential clustering or grouping criteria that exist in these images. So I can better understand my data and group them into different clusters based on different criteria.".into(),
            format!("Come up with {word} distinct clustering criteria that exist in this set of images."),
            "Please write a list of clustering criteria (separated by bullet points \u{201c}*\u{201d}).".into(),
            format!(
                "Again I want to figure out what are the potential clustering/grouping criteria that I can use to group these images into different clusters. List {word} clustering or grouping criteria that often exist in this set of images based on the captioning results. Answer with a list (separated by bullet points \u{201c}*\u{201d}). Your response:"
            ),
        ],
    )
}

/// Consolidation of the raw criteria pool.
pub fn refine_criteria(raw_names: &[&str]) -> Prompt {
    let listed = raw_names
        .iter()
        .enumerate()
        .map(|(i, n)| format!("* Criterion {}: \"{}\"", i + 1, n))
        .collect::<Vec<_>>()
        .join("\n");
    Prompt::new(
        SYS,
        &[
            "I am a machine learning researcher working with a set of images. I aim to cluster this set of images based on the various clustering criteria present within them. Below is a preliminary list of clustering criteria that I\u{2019}ve discovered to group these images:".into(),
            listed,
            "My goal is to refine this list by merging similar criteria and rephrasing them using more precise and informative terms. This will help create a set of distinct, optimized clustering criteria.".into(),
            "Your task is to first review and understand the initial list of clustering criteria provided. Then, assist me in refining this list by:\n* Merging similar criteria.\n* Expressing each criterion more clearly and informatively.".into(),
            "Please respond with the cleaned and optimized list of clustering criteria, formatted as bullet points (using \u{201c}*\u{201d}). Your response:".into(),
        ],
    )
}

/// Generation of a criterion-specific VQA question.
pub fn vqa_question(criterion: &str) -> Prompt {
    Prompt::new(
        SYS,
        &[
            format!("Hello! I am a machine learning researcher focusing on image categorization based on the aspect of \"{criterion}\" depicted in images."),
            format!(
                "Therefore, I need your assistance in designing a prompt for the Visual Question Answering (VQA) model to help it identify the \"{criterion}\" category in a given image at three different granularity. Please help me design and generate this prompt using the following template: \"Question: [Generated VQA Prompt Question] Answer (reply with an abstract, a common, and a specific category name, respectively):\". The generated prompt should be simple and straightforward."
            ),
            "Please respond with only the generated prompt using the following format \"* Answer *\". Your response:".into(),
        ],
    )
}

/// Mid-granularity tag candidates for a criterion.
pub fn mid_tags(criterion: &str) -> Prompt {
    Prompt::new(
        SYS,
        &[
            format!("Hello! I am a machine learning researcher focusing on image categorization of a certain aspect. I'm interested in generating a list of tags specifically for categorizing the types of \"{criterion}\" depicted in images."),
            format!("Please provide a list of potential \"{criterion}\" category names. Please generate diverse category names. Do not include too general or specific category names such as \"Sports\"."),
            "Please respond with the list of category names. Each category should be formatted as follows: \"* Category Name\". Your response:".into(),
        ],
    )
}

/// Super-categories of one mid tag.
pub fn coarse_tags(criterion: &str, mid: &str, count: usize) -> Prompt {
    Prompt::new(
        SYS,
        &[
            format!(
                "Generate a list of {} more abstract or general \"{criterion}\" super-categories that the following \"{criterion}\" category belongs to and output the list separated by \"&\" (without numbers): \"{mid}\"",
                number_word(count)
            ),
            "Your response:".into(),
        ],
    )
}

/// Sub-categories of one mid tag.
pub fn fine_tags(criterion: &str, mid: &str, count: usize) -> Prompt {
    Prompt::new(
        SYS,
        &[
            format!(
                "Generate a list of {} more detailed or specific \"{criterion}\" sub-categories of the following \"{criterion}\" category and output the list separated by \"&\" (without numbers): \"{mid}\"",
                number_word(count)
            ),
            "Your response:".into(),
        ],
    )
}

/// Criterion-focused caption for one image.
pub fn criterion_caption(criterion: &str) -> Prompt {
    Prompt::new(
        "You are a helpful AI assistant.",
        &[
            format!(
                "Analyze the image focusing specifically on the \"{criterion}\". Provide a detailed description of the \"{criterion}\" depicted in the image. Highlight key elements and interactions relevant to the \"{criterion}\" that enhance the understanding of the scene."
            ),
            "Your response:".into(),
        ],
    )
}

/// Initial free-form name for one image from its criterion caption.
pub fn initial_name(criterion: &str, caption: &str) -> Prompt {
    Prompt::new(
        SYS,
        &[
            format!("The following is the description about the \"{criterion}\" of an image:"),
            format!("\"{}\"", caption.trim()),
            format!("I am a machine learning researcher trying to assign a label to this image based on what is the \"{criterion}\" depicted in this image."),
            format!("Understand the provided description carefully and assign a label to this image based on what is the \"{criterion}\" depicted in this image."),
            "Please respond in the following format within five words: \"*Answer*\". Do not talk about the description and do not respond long sentences. The answer should be within five words.".into(),
            format!("Again, your job is to understand the description and assign a label to this image based on what is the \"{criterion}\" shown in this image. Your response:"),
        ],
    )
}

const GRANULARITY_EXAMPLE: &str = "These categories might not be at the same semantic granularity level. For example, category 1 could be \"cutting vegetables\", while category 2 is simply \"cutting\". In this case, category 1 is more specific than category 2.";

fn bullet_quoted(names: &[&str]) -> String {
    names.iter().map(|n| format!("* \"{n}\"")).collect::<Vec<_>>().join("\n")
}

/// Three-level hierarchy over the distinct initial names.
pub fn hierarchy(criterion: &str, initial_names: &[&str]) -> Prompt {
    let c = criterion;
    Prompt::new(
        SYS,
        &[
            format!("The following is an initial list of \"{c}\" categories. {GRANULARITY_EXAMPLE}"),
            bullet_quoted(initial_names),
            format!(
                "{GRANULARITY_EXAMPLE} Your job is to generate a three-level class hierarchy (class taxonomy, where the first level contains more abstract or general coarse-grained classes, the third level contains more specific fine-grained classes, and the second level contains intermediate mid-grained classes) of \"{c}\" based on the provided list of \"{c}\" categories. Follow these steps to generate the hierarchy."
            ),
            format!(
                "Follow these steps to generate the hierarchy:\nStep 1 - Understand the provided initial list of \"{c}\" categories. The following three-level class hierarchy generation steps are all based on the provided initial list.\nStep 2 - Generate a list of abstract or general \"{c}\" categories as the first level of the class hierarchy, covering all the concepts present in the initial list.\nStep 3 - Generate a list of middle-grained \"{c}\" categories as the second level of the class hierarchy, in which the middle-grained categories are the subcategories of the categories in the first level. The categories in the second-level are more specific than the first level but should still cover and reflect all the concepts present in the initial list.\nStep 4 - Generate a list of more specific fine-grained \"{c}\" categories as the third level of the class hierarchy, in which the categories should reflect more specific \"{c}\" concepts that you can infer from the initial list. The categories in the third-level are subcategories of the second-level.\nStep 5 - Output the generated three-level class hierarchy as a JSON object where the keys are the level numbers and the values are a flat list of generated categories at each level, structured like: {{ \"level 1\": [\"categories\"], \"level 2\": [\"categories\"], \"level 3\": [\"categories\"] }}"
            ),
            "Please only output the JSON object in your response and simply use a flat list to store the generated categories at each level. Your response:".into(),
        ],
    )
}

/// Single-level consolidation of the initial names (the flat ablation).
pub fn flat_refinement(criterion: &str, initial_names: &[&str]) -> Prompt {
    let c = criterion;
    Prompt::new(
        SYS,
        &[
            format!("The following is an initial list of \"{c}\" categories. {GRANULARITY_EXAMPLE}"),
            bullet_quoted(initial_names),
            format!(
                "Your job is to consolidate this list into a single flat list of \"{c}\" categories that all sit at one consistent semantic granularity level and together cover all the concepts present in the initial list. Merge categories that refer to the same concept."
            ),
            "Please respond with the consolidated list only, one category per line formatted as \"* Category Name\". Your response:".into(),
        ],
    )
}

/// Final choice of one candidate name for an image at one level.
pub fn final_assignment(criterion: &str, caption: &str, candidates: &[&str]) -> Prompt {
    Prompt::new(
        SYS,
        &[
            format!("The following is a detailed description about the \"{criterion}\" of an image."),
            format!("\"{}\"", caption.trim()),
            format!("Based on the content and details provided in the description, classify the image into one of the specified \"{criterion}\" categories listed below:"),
            format!("\"{criterion}\" categories:\n{}", bullet_quoted(candidates)),
            "Ensure that your classification adheres to the details mentioned in the image description. Respond with the classification result in the following format: \"*category name*\". Your response:".into(),
        ],
    )
}

/// Rough token estimate (four characters per token).
pub fn estimate_tokens(prompt: &Prompt) -> usize {
    (prompt.system.chars().count() + prompt.user.chars().count()).div_ceil(4)
}
