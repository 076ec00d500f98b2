#pragma once

#include "structsum/autoqa.hpp"
#include "structsum/critics.hpp"
#include "structsum/errors.hpp"
#include "structsum/llm.hpp"
#include "structsum/mindmapgen.hpp"
#include "structsum/model.hpp"
#include "structsum/pipeline.hpp"
#include "structsum/prompting.hpp"
#include "structsum/sentence_splitter.hpp"
#include "structsum/services.hpp"
#include "structsum/stats.hpp"
#include "structsum/study.hpp"
#include "structsum/tablegen.hpp"
#include "structsum/text_util.hpp"
#include "structsum/textproc.hpp"
