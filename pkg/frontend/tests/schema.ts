// Small OpenAPI/JSON-schema subset validator for the contract tests: enough
// of the vocabulary to check request bodies against docs/openapi.json
// (types incl. null, properties/required, items, enum, anyOf/allOf, $ref,
// numeric and length bounds).

export type Schema = Record<string, any>;

export interface OpenApiDoc {
  paths: Record<string, any>;
  components: { schemas: Record<string, Schema> };
}

export function requestSchema(doc: OpenApiDoc, path: string,
                              method: string): Schema {
  const op = doc.paths[path]?.[method.toLowerCase()];
  if (!op) throw new Error(`no operation ${method} ${path}`);
  const schema = op.requestBody?.content?.["application/json"]?.schema;
  if (!schema) throw new Error(`no JSON request body for ${method} ${path}`);
  return schema;
}

function resolve(schema: Schema, doc: OpenApiDoc): Schema {
  if (schema.$ref) {
    const name = schema.$ref.replace("#/components/schemas/", "");
    const target = doc.components.schemas[name];
    if (!target) throw new Error(`unresolved $ref ${schema.$ref}`);
    return resolve(target, doc);
  }
  return schema;
}

function typeOf(value: unknown): string {
  if (value === null) return "null";
  if (Array.isArray(value)) return "array";
  if (typeof value === "number") {
    return Number.isInteger(value) ? "integer" : "number";
  }
  return typeof value;
}

export function validate(value: unknown, rawSchema: Schema, doc: OpenApiDoc,
                         where = "$"): string[] {
  const schema = resolve(rawSchema, doc);
  const problems: string[] = [];

  if (schema.anyOf) {
    const attempts = schema.anyOf.map(
      (branch: Schema) => validate(value, branch, doc, where));
    if (!attempts.some((errors: string[]) => errors.length === 0)) {
      problems.push(
        `${where}: matches no anyOf branch (${attempts.map(
          (e: string[]) => e[0]).join(" | ")})`);
    }
    return problems;
  }
  if (schema.allOf) {
    for (const branch of schema.allOf) {
      problems.push(...validate(value, branch, doc, where));
    }
    return problems;
  }

  if (schema.enum && !schema.enum.some((v: unknown) =>
      JSON.stringify(v) === JSON.stringify(value))) {
    problems.push(`${where}: ${JSON.stringify(value)} not in enum`);
    return problems;
  }

  if (schema.type) {
    const actual = typeOf(value);
    const allowed: string[] = Array.isArray(schema.type)
      ? schema.type : [schema.type];
    const ok = allowed.some((t) =>
      t === actual || (t === "number" && actual === "integer"));
    if (!ok) {
      problems.push(`${where}: expected ${allowed.join("/")}, got ${actual}`);
      return problems;
    }
  }

  if (typeof value === "number") {
    if (schema.minimum !== undefined && value < schema.minimum) {
      problems.push(`${where}: ${value} < minimum ${schema.minimum}`);
    }
    if (schema.maximum !== undefined && value > schema.maximum) {
      problems.push(`${where}: ${value} > maximum ${schema.maximum}`);
    }
    if (schema.exclusiveMinimum !== undefined &&
        value <= schema.exclusiveMinimum) {
      problems.push(`${where}: ${value} <= exclusiveMinimum`);
    }
  }
  if (typeof value === "string") {
    if (schema.minLength !== undefined && value.length < schema.minLength) {
      problems.push(`${where}: shorter than minLength ${schema.minLength}`);
    }
  }

  if (Array.isArray(value)) {
    if (schema.minItems !== undefined && value.length < schema.minItems) {
      problems.push(`${where}: fewer than minItems ${schema.minItems}`);
    }
    if (schema.items) {
      value.forEach((item, i) => {
        problems.push(...validate(item, schema.items, doc, `${where}[${i}]`));
      });
    }
  }

  if (typeOf(value) === "object") {
    const obj = value as Record<string, unknown>;
    for (const name of schema.required ?? []) {
      if (!(name in obj)) {
        problems.push(`${where}: missing required property ${name}`);
      }
    }
    for (const [name, sub] of Object.entries(schema.properties ?? {})) {
      if (name in obj) {
        problems.push(
          ...validate(obj[name], sub as Schema, doc, `${where}.${name}`));
      }
    }
    if (schema.additionalProperties === false) {
      for (const name of Object.keys(obj)) {
        if (!(name in (schema.properties ?? {}))) {
          problems.push(`${where}: unexpected property ${name}`);
        }
      }
    }
  }
  return problems;
}
