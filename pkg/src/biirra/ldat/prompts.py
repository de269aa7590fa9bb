"""Prompt templates for the translation and image-aware rewrite requests."""

TRANSLATE_TEMPLATE = "Please translate the English sentence '{source}' into {language}"
REWRITE_TEMPLATE = ("<img>{image}</img> Please combine the image information, "
                    "translate the English sentence '{source}' into {language}")


def render_translation_prompt(source_text, target_language):
    # values are substituted verbatim; quotes inside source_text are not escaped
    return TRANSLATE_TEMPLATE.format(source=source_text, language=target_language)


def render_rewrite_prompt(image_ref, source_text, target_language):
    return REWRITE_TEMPLATE.format(image=image_ref, source=source_text, language=target_language)
