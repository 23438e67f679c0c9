class Settings():
    # DATASET
    # ///////////////////////////////////////////////////////////////
    IMAGES_PER_LOCATION = 6
    IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
    MANIFEST_COLUMNS = ("location_id", "split", "label")

    # COLLAGE
    # ///////////////////////////////////////////////////////////////
    GRID = (2, 3)
    SEPARATOR_WIDTH = 0

    # BACKEND
    # ///////////////////////////////////////////////////////////////
    BACKEND_URL = "http://localhost:11434/api/chat"
    MOCK_URL = "mock://"
    VLM_MODEL = "qwen2-vl:72b"
    LLM_MODEL = "llama3.2"
    TEMPERATURE = 0.0
    SEED = 17
    MAX_TOKENS = 512
    TIMEOUT_S = 120.0
    RETRIES = 3
    BACKOFF_S = 0.5
    JOBS = 4

    # MOCK BACKEND BIAS: P(Yes | positive), P(Yes | negative)
    MOCK_POSITIVE_BIAS = 0.75
    MOCK_NEGATIVE_BIAS = 0.25

    # PIPELINE
    # ///////////////////////////////////////////////////////////////
    PIPELINE = "A"
    SPLIT = "test"
    QUESTIONS = "q15"
    SWEEP_PRESETS = ("q3", "q6", "q9", "q12", "q15", "q18")
    UNPARSEABLE = "negative"

    # MLP
    # ///////////////////////////////////////////////////////////////
    MLP_HIDDEN = 16
    MLP_LR = 0.05
    MLP_EPOCHS = 500
    MLP_SEED = 17
    MLP_THRESHOLD = 0.5

    # QUESTION SUBSET SEARCH
    # ///////////////////////////////////////////////////////////////
    OBJECTIVE = "macro_f1"
    STRATEGY = "greedy"
    SEARCH_BUDGET = 200
    MAX_EXHAUSTIVE_QUESTIONS = 20

    # ENVIRONMENT / ARTIFACTS
    # ///////////////////////////////////////////////////////////////
    ENV_BACKEND_URL = "GULLY_BACKEND_URL"
    ENV_CACHE_DIR = "GULLY_CACHE_DIR"
    ENV_API_TOKEN = "GULLY_API_TOKEN"
    SCHEMA_VERSION = 1
    LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"
