import type { AttributeSchema, AttributeValue } from "./types";

/** Render one labeled input per attribute straight from the served schema;
 * new server-side attributes appear without UI changes. */
export function renderForm(
  container: HTMLElement,
  schema: AttributeSchema,
  values: Record<string, AttributeValue>,
  onChange: (name: string, value: AttributeValue) => void,
): void {
  container.textContent = "";
  for (const [name, spec] of Object.entries(schema)) {
    const row = document.createElement("div");
    row.className = "form-row";

    const label = document.createElement("label");
    label.textContent = name.replace(/_/g, " ");
    label.htmlFor = `attr-${name}`;
    row.appendChild(label);

    let input: HTMLInputElement | HTMLSelectElement;
    if (spec.type === "categorical") {
      const select = document.createElement("select");
      for (const v of spec.values) {
        const opt = document.createElement("option");
        opt.value = v;
        opt.textContent = v;
        select.appendChild(opt);
      }
      select.value = String(values[name] ?? spec.values[0] ?? "");
      select.addEventListener("change", () => onChange(name, select.value));
      input = select;
    } else if (spec.type === "binary") {
      const box = document.createElement("input");
      box.type = "checkbox";
      box.checked = Number(values[name] ?? 0) === 1;
      box.addEventListener("change", () => onChange(name, box.checked ? 1 : 0));
      input = box;
    } else {
      const num = document.createElement("input");
      num.type = "number";
      num.step = "any";
      num.value = String(values[name] ?? 0);
      num.addEventListener("input", () => onChange(name, num.value === "" ? "" : Number(num.value)));
      input = num;
    }
    input.id = `attr-${name}`;
    input.setAttribute("name", name);
    row.appendChild(input);

    const error = document.createElement("span");
    error.className = "field-error";
    error.dataset.for = name;
    row.appendChild(error);

    container.appendChild(row);
  }
}

export function showFieldErrors(container: HTMLElement, errors: Map<string, string>): void {
  for (const span of container.querySelectorAll<HTMLSpanElement>(".field-error")) {
    const name = span.dataset.for ?? "";
    span.textContent = errors.get(name) ?? "";
  }
}
